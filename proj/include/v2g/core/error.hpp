// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace v2g {

/// Exception carrying a module-specific error code.
///
/// Each module declares its own `enum class` of failure kinds and an alias
/// such as `using CodecError = Error<CodecErrc>;`. Callers that need to branch
/// on the failure catch the alias and switch on `code()`.
template <typename Code>
class Error : public std::runtime_error {
public:
    Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Code code() const noexcept { return code_; }

private:
    Code code_;
};

} // namespace v2g

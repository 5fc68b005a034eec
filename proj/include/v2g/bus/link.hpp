// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <set>

#include "v2g/core/time.hpp"

namespace v2g::bus {

/// Emulated access link between one session and the broker.
struct LinkProfile {
    /// One-way latency: fixed when min == max, otherwise uniform over [min, max] ms.
    TimeMs latency_min_ms = 0;
    TimeMs latency_max_ms = 0;
    double drop_probability = 0.0;
    std::uint64_t seed = 0;
    /// Zero-based indices of lossy transmissions (PUBLISH / PUBACK) that are always
    /// dropped, independent of drop_probability. Used to script loss in tests.
    std::set<std::uint64_t> scripted_drops;

    static LinkProfile fixed(TimeMs ms, std::uint64_t seed = 0) { return LinkProfile{ms, ms, 0.0, seed, {}}; }
    static LinkProfile uniform(TimeMs lo, TimeMs hi, std::uint64_t seed) { return LinkProfile{lo, hi, 0.0, seed, {}}; }
};

/// Throws std::invalid_argument for inverted ranges or a drop probability outside [0,1].
void validate(const LinkProfile& link);

/// Seeded delay/loss sequence for one link. Identical profiles produce identical
/// sequences on every platform (the integer mapping is done here rather than by
/// a standard-library distribution).
class LinkSampler {
public:
    explicit LinkSampler(LinkProfile profile);

    /// Next one-way delay in milliseconds.
    TimeMs sample_delay();

    /// Decides the fate of the next lossy transmission.
    bool sample_drop();

    const LinkProfile& profile() const { return profile_; }

private:
    LinkProfile profile_;
    std::mt19937_64 delay_rng_;
    std::mt19937_64 drop_rng_;
    std::uint64_t lossy_count_ = 0;
};

} // namespace v2g::bus

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "v2g/service/engine.hpp"
#include "v2g/service/event_log.hpp"

namespace v2g::svc {

struct VerifyReport {
    std::size_t records = 0;
    std::size_t inputs = 0;
    std::size_t solves = 0;
    std::size_t meter_checks = 0;
    std::size_t ocpp_calls = 0;
    std::size_t ocpp_outstanding = 0; // calls still unanswered at the end of the log
    bool replay_identical = false;
    std::optional<std::uint64_t> first_mismatch_seq;
    std::vector<std::string> violations;
    std::map<std::string, std::size_t> kinds;

    bool ok() const { return violations.empty() && replay_identical; }
    nlohmann::json to_json() const;
};

/// Rebuilds the engine from the first record and feeds it the logged inputs.
/// Every regenerated line is handed to `on_record` together with the engine,
/// so callers can inspect state at each seq (the engine is null for the first
/// record, emitted while it is being built). Returns the regenerated lines.
std::vector<std::string> replay(const std::vector<std::string>& lines,
                                const std::function<void(const EventRecord&, const Engine*)>& on_record = {});

/// Structural checks on a log without re-running it: gapless seq and monotone
/// time, every solve feasible, legal charge point transitions, paired OCPP
/// calls, meter registers equal to the integral of applied power, SoC within
/// [0, 1] and consistent with the energy delivered.
void check_log(const std::vector<EventRecord>& log, VerifyReport& report);

/// check_log plus a byte-for-byte comparison against a replay.
VerifyReport verify_log(const std::vector<std::string>& lines);
VerifyReport verify_log_file(const std::string& path);

} // namespace v2g::svc

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "v2g/service/event_log.hpp"
#include "v2g/service/scenario.hpp"

namespace v2g::svc {

struct EngineOptions {
    /// Forces the uncoordinated baseline (every EV charges at its maximum from plug-in).
    bool baseline = false;
    std::optional<std::uint64_t> seed;
};

/// The whole simulated site on one discrete-event clock: vehicles and their
/// relays, the broker, simulated charge points, the central system, IMEP and
/// the scheduler. Single-threaded; the owner drives it with run_until/step.
///
/// Every state change is reported through the sink as an EventRecord, in
/// commit order. Inputs arriving from outside (the HTTP API) are recorded as
/// `api.*` records before their effects, so a log can be replayed from its
/// first record.
class Engine {
public:
    using RecordSink = std::function<void(const EventRecord&, const std::string& line)>;

    Engine(Scenario scenario, EngineOptions options, RecordSink sink = {});
    ~Engine();

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    TimeMs now() const;
    std::optional<TimeMs> next_event_time() const;
    std::uint64_t next_seq() const;
    const Scenario& scenario() const;
    bool baseline() const;

    /// Runs every event due at or before `t`, then moves the clock to `t`.
    void run_until(TimeMs t);
    /// Runs all events of the next pending instant. False when nothing is pending.
    bool step();

    // External inputs. Each throws SvcError and leaves the state unchanged on failure.
    nlohmann::json set_preferences(const std::string& vehicle_id, const nlohmann::json& body);
    nlohmann::json create_reservation(const nlohmann::json& body);
    nlohmann::json cancel_reservation(std::int64_t reservation_id);

    /// Re-applies a logged `api.*` record. The engine must be at the record's time.
    void apply_input(const EventRecord& record);

    nlohmann::json chargepoints_json() const;
    nlohmann::json vehicles_json() const;
    nlohmann::json schedule_json() const;
    nlohmann::json reservations_json() const;
    nlohmann::json metrics_json() const;
    /// Everything above plus the clock; equal across live run and replay at every seq.
    nlohmann::json state_json() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Runs a scenario headless to `until` (default: its duration) and returns the
/// final metrics. Records go to `sink` when given.
nlohmann::json run_scenario(const Scenario& scenario, EngineOptions options, std::optional<TimeMs> until,
                            Engine::RecordSink sink = {});

} // namespace v2g::svc

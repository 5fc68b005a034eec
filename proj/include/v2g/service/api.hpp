// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "v2g/service/engine.hpp"

namespace v2g::svc {

struct ServiceOptions {
    /// Empty disables the HTTP server (paced headless run).
    std::optional<std::string> host;
    int port = 0; // 0 picks a free port
    std::optional<std::string> log_dir;
    EngineOptions engine;
    /// Overrides the scenario's time_scale.
    std::optional<double> speed;
    /// The clock stops here; the service keeps answering requests.
    std::optional<TimeMs> until;
    bool autostart = true;
    std::size_t stream_buffer = 8192;
};

/// HTTP status for a service error code.
int http_status(SvcErrc code);

/// The running service: one loop thread owns the engine; HTTP handlers post
/// commands to it and serve reads from the latest immutable snapshot. The
/// loop paces sim time against the wall clock when time_scale > 0.
class ControlService {
public:
    explicit ControlService(ServiceOptions options);
    ~ControlService();

    ControlService(const ControlService&) = delete;
    ControlService& operator=(const ControlService&) = delete;

    /// Installs a scenario (replacing any running one) and opens its log.
    void load(Scenario scenario);
    /// Starts the loop thread and, if configured, the HTTP server.
    void start();
    void stop();
    /// Waits up to `timeout` for stop() or, for a headless service, for the
    /// clock to reach `until`. True when that happened.
    bool wait(std::chrono::milliseconds timeout);
    int port() const;

    /// Runs `fn` on the loop thread and returns its result.
    nlohmann::json call(std::function<nlohmann::json(Engine&)> fn);
    /// Latest snapshot: {sim_time_ms, running, scenario, chargepoints, vehicles, schedule, metrics, reservations}.
    std::shared_ptr<const nlohmann::json> snapshot() const;
    std::optional<std::string> log_path() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace v2g::svc

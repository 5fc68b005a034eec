// SPDX-License-Identifier: Apache-2.0
#include "v2g/service/api.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <future>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "v2g/core/realtime.hpp"

namespace v2g::svc {

using nlohmann::json;

int http_status(SvcErrc code) {
    switch (code) {
    case SvcErrc::UnknownVehicle:
    case SvcErrc::UnknownChargePoint:
    case SvcErrc::UnknownReservation:
        return 404;
    case SvcErrc::Conflict:
        return 409;
    case SvcErrc::DepartureInPast:
    case SvcErrc::InvalidPreference:
    case SvcErrc::InvalidWindow:
    case SvcErrc::ScenarioInvalid:
        return 422;
    case SvcErrc::BadRequest:
    case SvcErrc::LogInvalid:
        return 400;
    }
    return 500;
}

namespace {

/// Error raised inside a command that maps to an HTTP status without a service code.
struct HttpError : std::runtime_error {
    HttpError(int s, std::string c, const std::string& m) : std::runtime_error(m), status(s), code(std::move(c)) {}
    int status;
    std::string code;
};

void reply_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    reply_json(res, status, {{"error", code}, {"message", message}});
}

/// Committed records kept for stream clients, with Last-Event-ID resume.
class StreamBuffer {
public:
    explicit StreamBuffer(std::size_t capacity) : capacity_(capacity) {}

    void push(std::uint64_t seq, const std::string& kind, const std::string& line) {
        {
            std::lock_guard lock(mu_);
            items_.push_back({seq, kind, line});
            while (items_.size() > capacity_) {
                items_.pop_front();
            }
        }
        cv_.notify_all();
    }

    /// Resets after a scenario load; clients see the new seq 1 onwards.
    void clear() {
        {
            std::lock_guard lock(mu_);
            items_.clear();
            ++epoch_;
        }
        cv_.notify_all();
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    struct Item {
        std::uint64_t seq;
        std::string kind;
        std::string line;
    };

    std::uint64_t epoch() const {
        std::lock_guard lock(mu_);
        return epoch_;
    }

    /// Records after `after` (in the current epoch), waiting up to `timeout`.
    /// `epoch` is updated. A changed epoch, or a cursor the buffer cannot
    /// continue from (already evicted, or ahead of everything we hold), restarts
    /// from the oldest retained record and sets `reset`.
    std::vector<Item> wait_after(std::uint64_t after, std::uint64_t& epoch, std::chrono::milliseconds timeout,
                                 bool& closed, bool& reset) {
        std::unique_lock lock(mu_);
        auto ready = [&] {
            return closed_ || epoch != epoch_ || (!items_.empty() && items_.back().seq != after);
        };
        cv_.wait_for(lock, timeout, ready);
        closed = closed_;
        reset = false;
        if (epoch != epoch_) {
            epoch = epoch_;
            after = 0;
            reset = true;
        } else if (after > 0 && !items_.empty() && (items_.front().seq > after + 1 || items_.back().seq < after)) {
            after = 0;
            reset = true;
        }
        std::vector<Item> out;
        for (const auto& it : items_) {
            if (it.seq > after) {
                out.push_back(it);
            }
        }
        return out;
    }

private:
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Item> items_;
    std::uint64_t epoch_ = 0;
    bool closed_ = false;
};

std::string sse_frame(const StreamBuffer::Item& it) {
    return "id: " + std::to_string(it.seq) + "\nevent: " + it.kind + "\ndata: " + it.line + "\n\n";
}

} // namespace

struct ControlService::Impl {
    ServiceOptions options;
    RealTimeScheduler wall; // the pacer's clock
    StreamBuffer stream;

    // loop-thread state
    std::unique_ptr<Engine> engine;
    std::unique_ptr<EventLogWriter> log;
    bool running = false;
    double scale = 0.0;
    std::int64_t anchor_wall_us = 0;
    TimeMs anchor_sim = 0;
    std::int64_t last_snapshot_us = -1'000'000;

    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::function<void()>> commands;
    bool stopping = false;
    bool finished = false;
    std::thread loop_thread;

    mutable std::mutex snap_mu;
    std::shared_ptr<const json> snap = std::make_shared<const json>(json{{"scenario", nullptr}});
    std::optional<std::string> log_file;

    std::unique_ptr<httplib::Server> http;
    std::thread http_thread;
    int bound_port = 0;

    explicit Impl(ServiceOptions o) : options(std::move(o)), stream(options.stream_buffer) {}

    // ---- loop thread ----------------------------------------------------------

    TimeMs until() const {
        return options.until.value_or(engine ? engine->scenario().duration_ms : 0);
    }

    void install(Scenario s) {
        engine.reset();
        if (log) {
            log->commit();
        }
        log.reset();
        stream.clear();
        std::optional<std::string> path;
        if (options.log_dir) {
            std::filesystem::create_directories(*options.log_dir);
            path = (std::filesystem::path(*options.log_dir) /
                    (s.name + "-" + std::to_string(options.engine.seed.value_or(s.seed)) + ".ndjson"))
                       .string();
            log = std::make_unique<EventLogWriter>(*path);
        }
        {
            std::lock_guard lock(snap_mu);
            log_file = path;
        }
        scale = options.speed.value_or(s.time_scale);
        engine = std::make_unique<Engine>(std::move(s), options.engine, [this](const EventRecord& r, const std::string& line) {
            if (log) {
                log->append(line);
            }
            stream.push(r.seq, r.kind, line);
        });
        running = false;
        commit(true);
    }

    void set_running(bool on) {
        if (on && engine && !running) {
            anchor_wall_us = wall.now_us();
            anchor_sim = engine->now();
        }
        running = on && engine;
    }

    /// fsyncs the batch and refreshes the read snapshot (throttled unless forced).
    void commit(bool force) {
        if (log) {
            log->commit();
        }
        const std::int64_t t = wall.now_us();
        if (!force && t - last_snapshot_us < 50'000) {
            return;
        }
        last_snapshot_us = t;
        json s;
        if (engine) {
            s = engine->state_json();
            s["scenario"] = engine->scenario().name;
            s["mode"] = engine->baseline() ? "baseline" : "optimized";
        } else {
            s = {{"scenario", nullptr}};
        }
        s["running"] = running;
        s["time_scale"] = scale;
        s["until_ms"] = engine ? json(until()) : json(nullptr);
        {
            std::lock_guard lock(snap_mu);
            snap = std::make_shared<const json>(std::move(s));
        }
    }

    void loop() {
        for (;;) {
            std::deque<std::function<void()>> batch;
            {
                std::unique_lock lock(mu);
                if (stopping) {
                    break;
                }
                batch.swap(commands);
            }
            for (auto& c : batch) {
                c();
            }
            if (!batch.empty()) {
                commit(true);
            }
            bool idle = true;
            std::chrono::microseconds wait{200'000};
            if (engine && running) {
                const TimeMs end = until();
                const auto next = engine->next_event_time();
                if (scale <= 0.0) {
                    if (next && *next <= end) {
                        engine->step();
                        idle = false;
                    } else {
                        engine->run_until(std::max(engine->now(), end));
                        running = false;
                        commit(true);
                    }
                } else {
                    const double elapsed_s = static_cast<double>(wall.now_us() - anchor_wall_us) / 1e6;
                    const TimeMs target = std::min<TimeMs>(
                        end, anchor_sim + static_cast<TimeMs>(elapsed_s * scale * static_cast<double>(kMsPerSecond)));
                    if (next && *next <= target) {
                        engine->run_until(*next);
                        idle = false;
                    } else {
                        engine->run_until(std::max(engine->now(), target));
                        if (target >= end) {
                            running = false;
                            commit(true);
                        } else if (next) {
                            const double due_us =
                                static_cast<double>(*next - anchor_sim) / static_cast<double>(kMsPerSecond) / scale *
                                    1e6 +
                                static_cast<double>(anchor_wall_us) - static_cast<double>(wall.now_us());
                            wait = std::chrono::microseconds(
                                std::clamp<std::int64_t>(static_cast<std::int64_t>(due_us), 0, 200'000));
                        }
                    }
                }
                commit(false);
            }
            if (engine && !running && !finished && engine->now() >= until()) {
                std::lock_guard lock(mu);
                finished = true;
                cv.notify_all();
            }
            if (idle) {
                std::unique_lock lock(mu);
                cv.wait_for(lock, wait, [&] { return stopping || !commands.empty(); });
            }
        }
        if (log) {
            log->commit();
        }
        stream.close();
    }

    json call(std::function<json(Engine&)> fn) {
        auto done = std::make_shared<std::promise<json>>();
        auto result = done->get_future();
        post([this, fn = std::move(fn), done] {
            try {
                if (!engine) {
                    throw HttpError(409, "NoScenario", "no scenario loaded");
                }
                json out = fn(*engine);
                commit(true); // reads after the reply must see the effect
                done->set_value(std::move(out));
            } catch (...) {
                done->set_exception(std::current_exception());
            }
        });
        return result.get();
    }

    void post(std::function<void()> fn) {
        {
            std::lock_guard lock(mu);
            commands.push_back(std::move(fn));
        }
        cv.notify_all();
    }

    json control(std::function<json()> fn) {
        auto done = std::make_shared<std::promise<json>>();
        auto result = done->get_future();
        post([this, fn = std::move(fn), done] {
            try {
                json out = fn();
                commit(true);
                done->set_value(std::move(out));
            } catch (...) {
                done->set_exception(std::current_exception());
            }
        });
        return result.get();
    }

    // ---- HTTP -----------------------------------------------------------------

    template <typename F>
    void guarded(httplib::Response& res, F&& f) {
        try {
            f();
        } catch (const SvcError& e) {
            reply_error(res, http_status(e.code()), std::string(to_string(e.code())), e.what());
        } catch (const HttpError& e) {
            reply_error(res, e.status, e.code, e.what());
        } catch (const json::exception& e) {
            reply_error(res, 400, "BadRequest", e.what());
        } catch (const std::exception& e) {
            reply_error(res, 500, "Internal", e.what());
        }
    }

    json body_json(const httplib::Request& req) {
        if (req.body.empty()) {
            return json::object();
        }
        try {
            return json::parse(req.body);
        } catch (const json::exception& e) {
            throw SvcError(SvcErrc::BadRequest, std::string("malformed JSON: ") + e.what());
        }
    }

    void read_route(const std::string& path, const std::string& field) {
        http->Get(path, [this, field](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                const auto s = snapshot();
                if (!s->contains(field)) {
                    throw HttpError(409, "NoScenario", "no scenario loaded");
                }
                reply_json(res, 200, s->at(field));
            });
        });
    }

    void routes() {
        http->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                   {"Access-Control-Allow-Headers", "Content-Type, Last-Event-ID"},
                                   {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"}});
        http->Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        read_route("/api/v1/chargepoints", "chargepoints");
        read_route("/api/v1/vehicles", "vehicles");
        read_route("/api/v1/schedule", "schedule");
        read_route("/api/v1/metrics", "metrics");
        read_route("/api/v1/reservations", "reservations");
        http->Get("/api/v1/state", [this](const httplib::Request&, httplib::Response& res) {
            reply_json(res, 200, *snapshot());
        });
        http->Post(R"(/api/v1/vehicles/([^/]+)/preferences)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = req.matches[1];
                const json body = body_json(req);
                reply_json(res, 200, call([&](Engine& e) { return e.set_preferences(id, body); }));
            });
        });
        http->Post("/api/v1/reservations", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = body_json(req);
                reply_json(res, 201, call([&](Engine& e) { return e.create_reservation(body); }));
            });
        });
        http->Delete(R"(/api/v1/reservations/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::int64_t id = std::stoll(req.matches[1]);
                reply_json(res, 200, call([&](Engine& e) { return e.cancel_reservation(id); }));
            });
        });
        http->Post(R"(/api/v1/scenario/(load|start|pause|step))", [this](const httplib::Request& req,
                                                                          httplib::Response& res) {
            guarded(res, [&] {
                const std::string op = req.matches[1];
                if (op == "load") {
                    Scenario s = scenario_from_request(req);
                    reply_json(res, 200, control([&] {
                                   install(std::move(s));
                                   return json{{"scenario", engine->scenario().name}, {"running", false}};
                               }));
                    return;
                }
                const json body = body_json(req);
                reply_json(res, 200, control([&] {
                               if (!engine) {
                                   throw HttpError(409, "NoScenario", "no scenario loaded");
                               }
                               if (op == "start") {
                                   set_running(true);
                               } else if (op == "pause") {
                                   set_running(false);
                               } else {
                                   set_running(false);
                                   if (body.contains("until")) {
                                       const json& u = body["until"];
                                       const TimeMs t = u.is_number_integer() ? u.get<TimeMs>()
                                                                              : engine->now() + parse_duration(u.get<std::string>());
                                       engine->run_until(std::max(engine->now(), t));
                                   } else {
                                       engine->step();
                                   }
                               }
                               return json{{"sim_time_ms", engine->now()},
                                           {"next_seq", engine->next_seq()},
                                           {"running", running}};
                           }));
            });
        });
        http->Get("/api/v1/stream", [this](const httplib::Request& req, httplib::Response& res) {
            std::uint64_t after = 0;
            const std::string last = req.get_header_value("Last-Event-ID");
            if (!last.empty()) {
                try {
                    after = std::stoull(last);
                } catch (const std::exception&) {
                    after = 0;
                }
            } else if (req.has_param("after")) {
                after = std::stoull(req.get_param_value("after"));
            }
            auto cursor = std::make_shared<std::pair<std::uint64_t, std::uint64_t>>(after, stream.epoch()); // (seq, epoch)
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
                bool closed = false;
                bool reset = false;
                std::uint64_t epoch = cursor->second;
                const auto items = stream.wait_after(cursor->first, epoch, std::chrono::milliseconds(1000), closed, reset);
                if (reset) {
                    cursor->second = epoch;
                    cursor->first = 0;
                    const std::string reset = "event: reset\ndata: {}\n\n";
                    if (!sink.write(reset.data(), reset.size())) {
                        return false;
                    }
                }
                std::string out;
                for (const auto& it : items) {
                    out += sse_frame(it);
                    cursor->first = it.seq;
                }
                if (out.empty()) {
                    out = ": keepalive\n\n";
                }
                if (!sink.write(out.data(), out.size())) {
                    return false;
                }
                if (closed) {
                    sink.done();
                }
                return true;
            });
        });
    }

    Scenario scenario_from_request(const httplib::Request& req) {
        const std::string type = req.get_header_value("Content-Type");
        if (type.find("json") == std::string::npos) {
            return scenario_from_toml(req.body);
        }
        const json body = body_json(req);
        if (body.contains("path")) {
            return load_scenario(body["path"].get<std::string>());
        }
        if (body.contains("scenario")) {
            return scenario_from_json(body["scenario"]);
        }
        throw SvcError(SvcErrc::BadRequest, "expected {\"path\": ...} or {\"scenario\": {...}} or a TOML body");
    }

    std::shared_ptr<const json> snapshot() const {
        std::lock_guard lock(snap_mu);
        return snap;
    }
};

ControlService::ControlService(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

ControlService::~ControlService() { stop(); }

void ControlService::load(Scenario scenario) {
    if (impl_->loop_thread.joinable()) {
        impl_->control([&] {
            impl_->install(std::move(scenario));
            return json();
        });
    } else {
        impl_->install(std::move(scenario));
    }
}

void ControlService::start() {
    Impl& m = *impl_;
    if (m.options.autostart && m.engine) {
        m.set_running(true);
    }
    m.loop_thread = std::thread([&m] { m.loop(); });
    if (m.options.host) {
        m.http = std::make_unique<httplib::Server>();
        m.routes();
        if (m.options.port == 0) {
            m.bound_port = m.http->bind_to_any_port(*m.options.host);
        } else if (m.http->bind_to_port(*m.options.host, m.options.port)) {
            m.bound_port = m.options.port;
        } else {
            m.bound_port = -1;
        }
        if (m.bound_port <= 0) {
            throw std::runtime_error("cannot listen on " + *m.options.host + ":" + std::to_string(m.options.port));
        }
        m.http_thread = std::thread([&m] { m.http->listen_after_bind(); });
    }
}

void ControlService::stop() {
    Impl& m = *impl_;
    {
        std::lock_guard lock(m.mu);
        m.stopping = true;
        m.finished = true;
    }
    m.cv.notify_all();
    m.stream.close();
    if (m.http) {
        m.http->stop();
    }
    if (m.http_thread.joinable()) {
        m.http_thread.join();
    }
    if (m.loop_thread.joinable()) {
        m.loop_thread.join();
    }
}

bool ControlService::wait(std::chrono::milliseconds timeout) {
    Impl& m = *impl_;
    std::unique_lock lock(m.mu);
    return m.cv.wait_for(lock, timeout, [&] { return m.stopping || (!m.options.host && m.finished); });
}

int ControlService::port() const { return impl_->bound_port; }

json ControlService::call(std::function<json(Engine&)> fn) { return impl_->call(std::move(fn)); }

std::shared_ptr<const json> ControlService::snapshot() const { return impl_->snapshot(); }

std::optional<std::string> ControlService::log_path() const {
    std::lock_guard lock(impl_->snap_mu);
    return impl_->log_file;
}

} // namespace v2g::svc

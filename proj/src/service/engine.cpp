// SPDX-License-Identifier: Apache-2.0
#include "v2g/service/engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "v2g/bus/broker.hpp"
#include "v2g/core/scheduler.hpp"
#include "v2g/ocpp/central_system.hpp"
#include "v2g/optimizer/solver.hpp"
#include "v2g/service/model_json.hpp"
#include "v2g/telemetry/codec.hpp"

namespace v2g::svc {

using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h = (h ^ c) * 0x100000001B3ULL;
    }
    return h;
}

double snap(double x) { return std::round(x * 1e9) / 1e9; }

std::string segment(const std::string& topic, std::size_t index) {
    std::size_t begin = 0;
    for (std::size_t i = 0; i < index; ++i) {
        begin = topic.find('/', begin);
        if (begin == std::string::npos) {
            return {};
        }
        ++begin;
    }
    return topic.substr(begin, topic.find('/', begin) - begin);
}

/// True when both profiles impose the same limits from `now` on.
bool same_from(const ocpp::ChargingProfile& a, const ocpp::ChargingProfile& b, TimeMs now) {
    if (a.valid_to != b.valid_to || a.limit_at(now) != b.limit_at(now)) {
        return false;
    }
    std::set<TimeMs> points;
    for (const auto* p : {&a, &b}) {
        for (auto t = p->next_change_after(now); t; t = p->next_change_after(*t)) {
            points.insert(*t);
        }
    }
    for (TimeMs t : points) {
        if (a.limit_at(t) != b.limit_at(t)) {
            return false;
        }
    }
    return true;
}

std::optional<double> register_kwh(const json& mv, const std::string& measurand) {
    if (!mv.contains("sampledValue")) {
        return std::nullopt;
    }
    for (const auto& s : mv["sampledValue"]) {
        if (s.value("measurand", std::string{}) == measurand) {
            return std::stod(s.at("value").get<std::string>()) / 1000.0;
        }
    }
    return std::nullopt;
}

/// Accepts an ISO 8601 string or integer milliseconds.
TimeMs time_value(const json& body, const std::string& key) {
    const json& v = body.at(key);
    if (v.is_number_integer()) {
        return v.get<TimeMs>();
    }
    if (v.is_string()) {
        return from_iso8601(v.get<std::string>());
    }
    throw std::invalid_argument(key + " must be an ISO 8601 string or milliseconds");
}

} // namespace

struct Engine::Impl {
    struct Vehicle {
        std::string id;
        ev::VehicleState seg; // state at seg_start
        TimeMs seg_start = 0;
        double power_kw = 0.0;
        std::optional<std::string> cp;
        bool charge_blocked = false;
        bool discharge_blocked = false;
        std::uint64_t limit_gen = 0;
        std::uint64_t departure_gen = 0;
        std::optional<opt::DriverPreference> pref;
        double required_kwh = 0.0;
        double energy_at_submission = 0.0;
        std::optional<json> departure;
        std::unique_ptr<bus::LocalClient> relay;
        std::unique_ptr<bus::LocalClient> app;
    };
    struct Cp {
        ChargePointSpec spec;
        std::unique_ptr<bus::LocalClient> client;
        std::unique_ptr<ocpp::SimulatedChargePoint> sim;
        std::optional<std::string> vehicle;
        std::set<TimeMs> armed;
    };
    struct Booking {
        opt::Reservation r;
        bool hold_sent = false;
    };

    RecordSink sink;
    Scenario scenario;
    bool baseline = false;
    std::uint64_t seed = 0;
    opt::GridConditions grid;

    EventQueue q;
    std::uint64_t next_seq = 1;
    std::unique_ptr<bus::Broker> broker;
    std::unique_ptr<bus::LocalClient> backend;
    std::map<std::string, Cp> cps;
    std::map<std::string, Vehicle> vehicles;
    std::unique_ptr<ocpp::CentralSystem> cs;
    std::set<TimeMs> cs_armed;

    opt::Imep imep;
    std::map<std::string, std::int64_t> cp_tx;
    std::map<std::string, ocpp::ChargingProfile> last_sent;
    std::vector<std::string> baseline_order; // charge points in transaction start order
    std::map<std::int64_t, Booking> bookings;
    std::int64_t next_reservation = 1;
    std::int64_t next_profile = 1;
    bool solve_pending = false;
    std::vector<std::string> solve_reasons;

    // latest plan
    std::optional<opt::OptimizationInstance> plan_instance;
    std::optional<opt::ChargingSchedule> plan;
    std::optional<opt::Flexibility> plan_flex;
    std::vector<std::string> plan_forecast_only;
    std::vector<std::string> plan_reasons;
    TimeMs plan_solved_at = 0;

    // metrics
    std::map<std::string, TimeMs> rtt_pending;
    std::vector<TimeMs> rtts;
    double peak_site_kw = 0.0;
    bool site_dirty = false;
    std::vector<std::pair<TimeMs, double>> site_samples;
    std::uint64_t solves = 0;
    std::uint64_t profiles_sent = 0;
    std::uint64_t profiles_accepted = 0;
    std::uint64_t profiles_rejected = 0;
    std::uint64_t warnings = 0;

    Impl(Scenario s, EngineOptions options, RecordSink out)
        : sink(std::move(out)), scenario(std::move(s)), baseline(options.baseline || scenario.baseline),
          seed(options.seed.value_or(scenario.seed)), grid(scenario.grid()) {
        imep.set_trips(scenario.trips);
        emit("scenario", {{"scenario", to_json(scenario)}, {"options", {{"baseline", baseline}, {"seed", seed}}}});
        broker = std::make_unique<bus::Broker>(q, bus::BrokerConfig{scenario.bus_token, 100});
        backend = client("backend");
        backend->subscribe("v2g/+/telemetry", [this](const bus::BusMessage& m) { guarded([&] { on_telemetry(m); }); });
        backend->subscribe("v2g/+/preferences",
                           [this](const bus::BusMessage& m) { guarded([&] { on_preference_message(m); }); });
        backend->subscribe("v2g/cp/+/ocpp/up", [this](const bus::BusMessage& m) { guarded([&] { on_ocpp_up(m); }); });

        ocpp::CentralSystemHooks hooks;
        hooks.send = [this](const std::string& cp_id, const std::string& frame) { send_down(cp_id, frame); };
        hooks.on_status = [this](const ocpp::ChargePointStatus& st, std::optional<ocpp::CpEvent> ev, TimeMs) {
            on_status(st, ev);
        };
        hooks.on_meter = [this](const std::string& cp_id, const json& mv, TimeMs) { on_meter(cp_id, mv); };
        hooks.on_profile = [this](const std::string& cp_id, const ocpp::ChargingProfile& p, bool ok,
                                  const std::string& detail) { on_profile(cp_id, p, ok, detail); };
        hooks.on_reservation = [this](const std::string& cp_id, std::int64_t rid, const std::string& action,
                                      const std::string& status) {
            emit("reservation.ack", {{"cp_id", cp_id}, {"reservation_id", rid}, {"action", action}, {"status", status}});
        };
        hooks.on_violation = [this](const std::string& cp_id, const std::string& what) {
            warn("ocpp violation at " + cp_id + ": " + what);
        };
        cs = std::make_unique<ocpp::CentralSystem>(std::move(hooks));

        for (const auto& spec : scenario.charge_points) {
            Cp& c = cps[spec.id];
            c.spec = spec;
            cs->register_charge_point(spec.id, spec.rating_kw, spec.bidirectional);
            imep.ingest(opt::ChargePointEvent{0, spec.id, spec.rating_kw, spec.bidirectional});
            c.client = client("cp-" + spec.id);
            const std::string id = spec.id;
            c.sim = std::make_unique<ocpp::SimulatedChargePoint>(
                id, spec.rating_kw, spec.bidirectional, [this, id](const std::string& frame) {
                    cps.at(id).client->publish(bus::cp_ocpp_up_topic(id), frame, bus::Qos::AtLeastOnce);
                });
            c.sim->on_power = [this, id](TimeMs t, double p) { on_power(id, t, p); };
            c.sim->on_call_error = [this, id](const ocpp::OcppMessage& m) {
                warn("charge point " + id + " got CallError " + m.error_code + ": " + m.error_description);
            };
            c.client->subscribe(bus::cp_ocpp_down_topic(id), [this, id](const bus::BusMessage& m) {
                guarded([&] { cps.at(id).sim->on_frame(m.payload, q.now()); });
            });
        }
        for (const auto& spec : scenario.vehicles) {
            Vehicle& v = vehicles[spec.state.vehicle_id];
            v.id = spec.state.vehicle_id;
            v.seg = spec.state;
            v.seg.presence = spec.state.presence.kind == ev::PresenceKind::PluggedIn ? ev::Presence::parked()
                                                                                     : spec.state.presence;
            v.seg.timestamp = 0;
            v.relay = client("relay-" + v.id);
            v.app = client("app-" + v.id);
            // fleet registry entry: battery and charger data, no SoC
            opt::TelemetryEvent reg;
            reg.vehicle_id = v.id;
            reg.capacity_kwh = spec.state.capacity_kwh;
            reg.max_charge_kw = spec.state.max_charge_kw;
            reg.max_discharge_kw = spec.state.max_discharge_kw;
            reg.charge_efficiency = spec.state.charge_efficiency;
            reg.discharge_efficiency = spec.state.discharge_efficiency;
            imep.ingest(reg);
        }

        // t = 0: boot, initial plugs, telemetry and slot chains, scripted events.
        for (auto& [id, c] : cps) {
            c.sim->boot(0);
        }
        for (const auto& spec : scenario.vehicles) {
            if (spec.state.presence.kind == ev::PresenceKind::PluggedIn) {
                const std::string vid = spec.state.vehicle_id;
                const std::string cp = spec.state.presence.charge_point_id;
                task(0, [this, vid, cp] { plug_flow(vid, cp); });
            }
        }
        for (auto& [id, v] : vehicles) {
            const std::string vid = id;
            task(0, [this, vid] { telemetry_tick(vid); });
        }
        task(0, [this] { boundary(0); });
        arm_slot_solve(0);
        if (scenario.meter_interval_ms > 0) {
            task(scenario.meter_interval_ms, [this] { meter_tick(); });
        }
        for (const auto& e : scenario.events) {
            task(e.at, [this, e] { scripted(e); });
        }
    }

    // ---- plumbing -------------------------------------------------------------

    std::unique_ptr<bus::LocalClient> client(const std::string& id) {
        bus::LinkProfile link = scenario.link_for(id);
        link.seed = splitmix(seed ^ fnv1a(id) ^ splitmix(link.seed));
        return std::make_unique<bus::LocalClient>(*broker, q, id, link, bus::ClientConfig{scenario.bus_token, 100});
    }

    TimeMs now() const { return q.now(); }

    void emit(const std::string& kind, json payload) {
        EventRecord r{next_seq++, q.now(), kind, std::move(payload)};
        if (sink) {
            sink(r, r.line());
        }
    }

    void warn(const std::string& what) {
        ++warnings;
        emit("warning", {{"message", what}});
    }

    template <typename F>
    void guarded(F&& f) {
        try {
            f();
        } catch (const std::exception& e) {
            warn(e.what());
        }
    }

    void task(TimeMs at, std::function<void()> fn) {
        q.schedule_at(at, [this, fn = std::move(fn)] { guarded(fn); });
    }

    void rearm() {
        const TimeMs t0 = q.now();
        for (auto& [id, c] : cps) {
            if (auto t = c.sim->next_wakeup(t0); t && c.armed.insert(*t).second) {
                const std::string cid = id;
                const TimeMs at = *t;
                task(at, [this, cid, at] {
                    Cp& cp = cps.at(cid);
                    cp.armed.erase(at);
                    cp.sim->tick(q.now());
                });
            }
        }
        if (auto t = cs->next_wakeup(t0); t && cs_armed.insert(*t).second) {
            const TimeMs at = *t;
            task(at, [this, at] {
                cs_armed.erase(at);
                cs->tick(q.now());
            });
        }
    }

    bool run_next() {
        if (q.empty()) {
            return false;
        }
        if (q.next_time() > q.now()) {
            settle_peak();
        }
        q.run_one();
        rearm();
        return true;
    }

    void run_until(TimeMs t) {
        while (!q.empty() && q.next_time() <= t) {
            run_next();
        }
        if (t > q.now()) {
            settle_peak();
        }
        q.advance_to(t);
    }

    bool step() {
        if (q.empty()) {
            return false;
        }
        const TimeMs t = q.next_time();
        run_until(t);
        return true;
    }

    // ---- vehicle physics ------------------------------------------------------

    ev::VehicleState state_at(const Vehicle& v, TimeMs t) const {
        ev::VehicleState s = v.power_kw == 0.0 || t <= v.seg_start
                                 ? v.seg
                                 : ev::step_soc(v.seg, v.power_kw, ms_to_hours(t - v.seg_start));
        s.timestamp = t;
        return s;
    }

    void settle(Vehicle& v, TimeMs t) {
        v.seg = state_at(v, t);
        v.seg_start = t;
    }

    void apply_ceilings(Vehicle& v) {
        if (!v.cp) {
            return;
        }
        const double c = v.charge_blocked ? 0.0 : v.seg.max_charge_kw;
        const double d = v.discharge_blocked ? 0.0 : v.seg.max_discharge_kw;
        emit("ev.limit", {{"vehicle_id", v.id}, {"cp_id", *v.cp}, {"charge_kw", c}, {"discharge_kw", d}});
        cps.at(*v.cp).sim->set_ev_limits(c, d, q.now());
    }

    /// Schedules the instant the battery becomes full or empty at the current power.
    void arm_battery_limit(Vehicle& v) {
        const std::uint64_t gen = ++v.limit_gen;
        double hours = -1.0;
        if (v.power_kw > 0.0) {
            hours = (1.0 - v.seg.soc) * v.seg.capacity_kwh / (v.power_kw * v.seg.charge_efficiency);
        } else if (v.power_kw < 0.0) {
            hours = v.seg.soc * v.seg.capacity_kwh * v.seg.discharge_efficiency / -v.power_kw;
        }
        if (hours < 0.0 || hours > 1e7) {
            return;
        }
        const TimeMs at = v.seg_start + static_cast<TimeMs>(std::floor(hours * static_cast<double>(kMsPerHour)));
        const std::string vid = v.id;
        const bool charging = v.power_kw > 0.0;
        task(at, [this, vid, gen, charging] {
            Vehicle& veh = vehicles.at(vid);
            if (veh.limit_gen != gen) {
                return;
            }
            (charging ? veh.charge_blocked : veh.discharge_blocked) = true;
            apply_ceilings(veh);
            if (baseline && charging) {
                baseline_rebalance();
            }
        });
    }

    void on_power(const std::string& cp_id, TimeMs t, double p) {
        Cp& c = cps.at(cp_id);
        if (c.vehicle) {
            Vehicle& v = vehicles.at(*c.vehicle);
            settle(v, t);
            v.power_kw = p;
            emit("ev.power", {{"vehicle_id", v.id}, {"cp_id", cp_id}, {"power_kw", p}, {"soc", v.seg.soc}});
            arm_battery_limit(v);
            // leaving a full or empty battery lifts the opposite ceiling
            if ((p < 0.0 && v.charge_blocked) || (p > 0.0 && v.discharge_blocked)) {
                (p < 0.0 ? v.charge_blocked : v.discharge_blocked) = false;
                const std::string vid = v.id;
                task(t, [this, vid] { apply_ceilings(vehicles.at(vid)); });
            }
        } else {
            emit("ev.power", {{"vehicle_id", nullptr}, {"cp_id", cp_id}, {"power_kw", p}});
        }
        site_dirty = true;
    }

    // Several charge points can change setpoint at the same instant; only the
    // load that holds once the instant is over counts toward the peak.
    void settle_peak() {
        if (site_dirty) {
            peak_site_kw = std::max(peak_site_kw, site_kw());
            site_dirty = false;
        }
    }

    double site_kw() const {
        double s = 0.0;
        for (const auto& [id, c] : cps) {
            s += c.sim->applied_kw();
        }
        return s;
    }

    // ---- scripted inputs ------------------------------------------------------

    void scripted(const ScriptedEvent& e) {
        emit("script." + e.type, e.args);
        const json& a = e.args;
        if (e.type == "preference") {
            opt::DriverPreference p;
            p.vehicle_id = a.at("vehicle").get<std::string>();
            p.departure_time = a.at("departure").get<TimeMs>();
            if (a.contains("required_energy_kwh")) {
                p.required_energy_kwh = a["required_energy_kwh"].get<double>();
            }
            if (a.contains("trip_class")) {
                p.trip_class = opt::trip_class_from_string(a["trip_class"].get<std::string>());
            }
            p.soc_floor = a.value("soc_floor", p.soc_floor);
            p.v2g_consent = a.value("v2g_consent", p.v2g_consent);
            if (a.contains("arrival")) {
                p.arrival_time = a["arrival"].get<TimeMs>();
            }
            p.submitted_at = now();
            vehicles.at(p.vehicle_id)
                .app->publish(bus::preferences_topic(p.vehicle_id), opt::to_json(p).dump(), bus::Qos::AtLeastOnce);
        } else if (e.type == "reservation") {
            book(a.at("vehicle").get<std::string>(), a.at("charge_point").get<std::string>(),
                 a.at("start").get<TimeMs>(), a.at("end").get<TimeMs>(), false);
        } else if (e.type == "cancel_reservation") {
            cancel(a.at("reservation_id").get<std::int64_t>(), false);
        } else if (e.type == "arrive") {
            Vehicle& v = vehicles.at(a.at("vehicle").get<std::string>());
            settle(v, now());
            v.seg = ev::arrive(v.seg);
        } else if (e.type == "plug_in") {
            plug_flow(a.at("vehicle").get<std::string>(), a.at("charge_point").get<std::string>());
        } else if (e.type == "unplug") {
            unplug_flow(a.at("vehicle").get<std::string>());
        } else if (e.type == "drive") {
            Vehicle& v = vehicles.at(a.at("vehicle").get<std::string>());
            if (v.cp) {
                throw std::runtime_error(v.id + " cannot drive while plugged in");
            }
            settle(v, now());
            v.seg = ev::drive(v.seg, a.at("distance_km").get<double>());
        } else if (e.type == "fault") {
            cps.at(a.at("charge_point").get<std::string>()).sim->fault(now());
        } else if (e.type == "reset") {
            const std::string cp_id = a.at("charge_point").get<std::string>();
            Cp& c = cps.at(cp_id);
            c.sim->reset(now());
            if (c.vehicle) {
                // a reset drops the session; the cable has to be plugged again
                Vehicle& v = vehicles.at(*c.vehicle);
                settle(v, now());
                v.seg = ev::unplug(v.seg);
                v.cp.reset();
                v.power_kw = 0.0;
                ++v.limit_gen;
                c.vehicle.reset();
            }
        }
    }

    void plug_flow(const std::string& vid, const std::string& cp_id) {
        Vehicle& v = vehicles.at(vid);
        Cp& c = cps.at(cp_id);
        if (v.cp) {
            throw std::runtime_error(vid + " is already plugged into " + *v.cp);
        }
        if (c.vehicle) {
            throw std::runtime_error(cp_id + " is occupied by " + *c.vehicle);
        }
        settle(v, now());
        if (v.seg.presence.kind == ev::PresenceKind::EnRoute) {
            v.seg = ev::arrive(v.seg);
        }
        c.sim->plug_in(vid, v.seg.max_charge_kw, v.seg.max_discharge_kw, now());
        v.seg = ev::plug_in(v.seg, cp_id);
        v.cp = cp_id;
        c.vehicle = vid;
        v.charge_blocked = v.seg.soc >= 1.0;
        v.discharge_blocked = v.seg.soc <= 0.0;
        c.sim->authorize(vid, now());
        c.sim->start_transaction(now());
        apply_ceilings(v);
    }

    void unplug_flow(const std::string& vid) {
        Vehicle& v = vehicles.at(vid);
        if (!v.cp) {
            throw std::runtime_error(vid + " is not plugged in");
        }
        Cp& c = cps.at(*v.cp);
        if (c.sim->status().transaction_id) {
            c.sim->stop_transaction(now());
        }
        c.sim->unplug(now());
        settle(v, now());
        v.seg = ev::unplug(v.seg);
        v.power_kw = 0.0;
        ++v.limit_gen;
        v.cp.reset();
        c.vehicle.reset();
    }

    // ---- relays ---------------------------------------------------------------

    void telemetry_tick(const std::string& vid) {
        Vehicle& v = vehicles.at(vid);
        const TimeMs t = now();
        const ev::VehicleState s = state_at(v, t);
        json frames = json::array();
        for (auto kind : {telemetry::ReadingKind::SocPercent, telemetry::ReadingKind::BatteryCapacityKwh,
                          telemetry::ReadingKind::VehicleSpeedKph}) {
            frames.push_back(telemetry::to_hex(ev::answer_diagnostic(s, telemetry::encode_request(kind))));
        }
        const json payload = {{"vehicle_id", vid},
                              {"sampled_at", to_iso8601(t)},
                              {"presence", std::string(ev::to_string(s.presence.kind))},
                              {"frames", frames},
                              {"max_charge_kw", s.max_charge_kw},
                              {"max_discharge_kw", s.max_discharge_kw},
                              {"charge_efficiency", s.charge_efficiency},
                              {"discharge_efficiency", s.discharge_efficiency}};
        v.relay->publish(bus::telemetry_topic(vid), payload.dump(), bus::Qos::AtMostOnce);
        if (scenario.telemetry_interval_ms > 0) {
            task(t + scenario.telemetry_interval_ms, [this, vid] { telemetry_tick(vid); });
        }
    }

    void boundary(TimeMs t) {
        if (scenario.meter_interval_ms == 0) {
            send_meters();
        }
        // sample after the setpoint changes due at this boundary
        task(t, [this, t] {
            const double kw = site_kw();
            site_samples.emplace_back(t, kw);
            emit("site.sample", {{"site_kw", kw}, {"limit_kw", grid.site_limit_at(t)}});
        });
        const TimeMs next = t + scenario.slot_ms;
        task(next, [this, next] { boundary(next); });
    }

    void meter_tick() {
        send_meters();
        task(now() + scenario.meter_interval_ms, [this] { meter_tick(); });
    }

    void send_meters() {
        for (auto& [id, c] : cps) {
            if (c.sim->transaction_confirmed()) {
                c.sim->send_meter_values(now());
            }
        }
    }

    // ---- backend --------------------------------------------------------------

    void send_down(const std::string& cp_id, const std::string& frame) {
        emit("ocpp", {{"cp_id", cp_id}, {"dir", "down"}, {"frame", json::parse(frame)}});
        const auto msg = ocpp::parse_frame(frame);
        if (msg.kind == ocpp::FrameKind::Call) {
            rtt_pending[cp_id + "|" + msg.message_id] = now();
        }
        backend->publish(bus::cp_ocpp_down_topic(cp_id), frame, bus::Qos::AtLeastOnce);
    }

    void on_ocpp_up(const bus::BusMessage& m) {
        const std::string cp_id = segment(m.topic, 2);
        json frame;
        try {
            frame = json::parse(m.payload);
        } catch (const std::exception&) {
            frame = m.payload;
        }
        emit("ocpp", {{"cp_id", cp_id}, {"dir", "up"}, {"frame", frame}});
        try {
            const auto msg = ocpp::parse_frame(m.payload);
            if (msg.kind != ocpp::FrameKind::Call) {
                const auto it = rtt_pending.find(cp_id + "|" + msg.message_id);
                if (it != rtt_pending.end()) {
                    rtts.push_back(now() - it->second);
                    rtt_pending.erase(it);
                }
            }
        } catch (const ocpp::OcppError&) {
        }
        cs->handle_frame(cp_id, m.payload, now());
    }

    void on_telemetry(const bus::BusMessage& m) {
        const json p = json::parse(m.payload);
        opt::TelemetryEvent e;
        e.at = now();
        e.vehicle_id = segment(m.topic, 1);
        if (!vehicles.count(e.vehicle_id)) {
            throw std::runtime_error("telemetry from unknown vehicle " + e.vehicle_id);
        }
        e.sampled_at = from_iso8601(p.at("sampled_at").get<std::string>());
        for (const auto& hex : p.at("frames")) {
            const telemetry::Reading r = telemetry::decode_response(telemetry::parse_frame_hex(hex.get<std::string>()), e.at);
            if (r.kind == telemetry::ReadingKind::SocPercent) {
                e.soc = r.value / 100.0;
            } else if (r.kind == telemetry::ReadingKind::BatteryCapacityKwh) {
                e.capacity_kwh = r.value;
            }
        }
        e.presence = ev::presence_kind_from_string(p.at("presence").get<std::string>());
        e.max_charge_kw = p.at("max_charge_kw").get<double>();
        e.max_discharge_kw = p.at("max_discharge_kw").get<double>();
        e.charge_efficiency = p.at("charge_efficiency").get<double>();
        e.discharge_efficiency = p.at("discharge_efficiency").get<double>();
        emit("bus.telemetry", {{"vehicle_id", e.vehicle_id},
                               {"sampled_at_ms", *e.sampled_at},
                               {"soc", e.soc ? json(*e.soc) : json(nullptr)},
                               {"capacity_kwh", e.capacity_kwh ? json(*e.capacity_kwh) : json(nullptr)},
                               {"presence", p["presence"]}});
        imep.ingest(e);
    }

    void on_preference_message(const bus::BusMessage& m) {
        opt::DriverPreference p = opt::preference_from_json(json::parse(m.payload));
        emit("bus.preference", opt::to_json(p));
        if (p.vehicle_id != segment(m.topic, 1) || !vehicles.count(p.vehicle_id)) {
            throw std::runtime_error("preference for unknown vehicle on " + m.topic);
        }
        check_preference(p);
        accept_preference(p, "preference");
    }

    double registry_capacity(const std::string& vid) const {
        const auto it = imep.vehicles().find(vid);
        return it != imep.vehicles().end() && it->second.capacity_kwh > 0 ? it->second.capacity_kwh
                                                                          : scenario.vehicle(vid)->state.capacity_kwh;
    }

    void check_preference(const opt::DriverPreference& p) const {
        try {
            opt::validate_preference(p, scenario.trips, registry_capacity(p.vehicle_id), now());
        } catch (const opt::OptError& e) {
            throw SvcError(e.code() == opt::OptErrc::StalePreference ? SvcErrc::DepartureInPast
                                                                     : SvcErrc::InvalidPreference,
                           e.what());
        }
    }

    void accept_preference(const opt::DriverPreference& p, const std::string& reason) {
        imep.ingest(opt::PreferenceEvent{now(), p});
        Vehicle& v = vehicles.at(p.vehicle_id);
        v.pref = p;
        v.required_kwh = opt::required_energy(p, scenario.trips, registry_capacity(p.vehicle_id));
        v.energy_at_submission = state_at(v, now()).stored_energy_kwh();
        v.departure.reset();
        const std::uint64_t gen = ++v.departure_gen;
        const std::string vid = v.id;
        task(p.departure_time, [this, vid, gen] { departure(vid, gen); });
        trigger(reason);
    }

    void departure(const std::string& vid, std::uint64_t gen) {
        Vehicle& v = vehicles.at(vid);
        if (v.departure_gen != gen || !v.pref) {
            return;
        }
        const ev::VehicleState s = state_at(v, now());
        const double delivered = s.stored_energy_kwh() - v.energy_at_submission;
        const double unmet = snap(std::max(0.0, v.required_kwh - delivered));
        v.departure = json{{"vehicle_id", vid},
                           {"soc", s.soc},
                           {"required_kwh", v.required_kwh},
                           {"delivered_kwh", delivered},
                           {"unmet_energy_kwh", unmet}};
        emit("departure", *v.departure);
    }

    void on_status(const ocpp::ChargePointStatus& st, std::optional<ocpp::CpEvent> event) {
        emit("cp.status", {{"status", status_json(st)}, {"event", event ? json(std::string(ocpp::to_string(*event))) : json(nullptr)}});
        backend->publish(bus::cp_status_topic(st.cp_id), status_json(st).dump(), bus::Qos::AtMostOnce);
        if (!event) {
            return;
        }
        using ocpp::CpEvent;
        switch (*event) {
        case CpEvent::PlugIn: {
            const std::string vid = st.connected_vehicle.value_or("");
            imep.ingest(opt::PlugEvent{now(), vid, st.cp_id, true, st.ev_max_charge_kw, st.ev_max_discharge_kw});
            for (auto& [rid, b] : bookings) {
                if (b.r.state == opt::ReservationState::Active && b.r.vehicle_id == vid && b.r.cp_id == st.cp_id) {
                    set_booking_state(b, opt::ReservationState::Fulfilled);
                }
            }
            trigger("plug_in");
            break;
        }
        case CpEvent::StartTransaction:
            if (st.transaction_id) {
                cp_tx[st.cp_id] = *st.transaction_id;
            }
            if (baseline) {
                baseline_order.push_back(st.cp_id);
                baseline_rebalance();
            } else {
                trigger("start_transaction");
            }
            break;
        case CpEvent::StopTransaction:
        case CpEvent::Fault:
            last_sent.erase(st.cp_id);
            if (baseline) {
                std::erase(baseline_order, st.cp_id);
                baseline_rebalance();
            } else {
                trigger(*event == CpEvent::Fault ? "fault" : "stop_transaction");
            }
            break;
        case CpEvent::Unplug:
        case CpEvent::Reset:
            for (const auto& [vid, view] : imep.vehicles()) {
                if (view.cp_id == st.cp_id) {
                    imep.ingest(opt::PlugEvent{now(), vid, st.cp_id, false, std::nullopt, std::nullopt});
                    break;
                }
            }
            cp_tx.erase(st.cp_id);
            last_sent.erase(st.cp_id);
            if (baseline && std::erase(baseline_order, st.cp_id) > 0) {
                baseline_rebalance();
            }
            trigger(*event == CpEvent::Reset ? "reset" : "unplug");
            break;
        default:
            break;
        }
    }

    void on_meter(const std::string& cp_id, const json& mv) {
        const auto& st = cs->status(cp_id);
        const auto imp = register_kwh(mv, "Energy.Active.Import.Register");
        const auto exp = register_kwh(mv, "Energy.Active.Export.Register");
        if (!imp || !exp || !st.connected_vehicle) {
            warn("meter value from " + cp_id + " without registers or vehicle");
            return;
        }
        const TimeMs sampled = mv.contains("timestamp") ? from_iso8601(mv["timestamp"].get<std::string>()) : now();
        const auto tx = cp_tx.count(cp_id) ? std::optional<std::int64_t>(cp_tx.at(cp_id)) : std::nullopt;
        emit("meter", {{"cp_id", cp_id},
                       {"vehicle_id", *st.connected_vehicle},
                       {"transaction_id", tx ? json(*tx) : json(nullptr)},
                       {"sampled_at_ms", sampled},
                       {"import_kwh", *imp},
                       {"export_kwh", *exp}});
        imep.ingest(opt::MeterEvent{now(), *st.connected_vehicle, cp_id, tx, *imp, *exp, sampled});
    }

    void on_profile(const std::string& cp_id, const ocpp::ChargingProfile& p, bool accepted, const std::string& detail) {
        emit("profile", {{"phase", accepted ? "accepted" : "rejected"},
                         {"cp_id", cp_id},
                         {"profile", profile_json(p)},
                         {"detail", detail}});
        if (accepted) {
            ++profiles_accepted;
            imep.ingest(opt::ProfileEvent{now(), p.vehicle_id, p});
        } else {
            ++profiles_rejected;
            const auto it = last_sent.find(cp_id);
            if (it != last_sent.end() && it->second.profile_id == p.profile_id) {
                last_sent.erase(it);
            }
        }
    }

    // ---- scheduling -----------------------------------------------------------

    void trigger(const std::string& reason) {
        if (baseline) {
            return;
        }
        solve_reasons.push_back(reason);
        if (solve_pending) {
            return;
        }
        solve_pending = true;
        task(now(), [this] {
            if (solve_pending) {
                run_solve();
            }
        });
    }

    void arm_slot_solve(TimeMs after) {
        // first boundary whose solve instant (boundary - lead) is not before `after`
        TimeMs k = (after + scenario.dispatch_lead_ms + scenario.slot_ms - 1) / scenario.slot_ms;
        TimeMs at = k * scenario.slot_ms - scenario.dispatch_lead_ms;
        if (at < after) {
            at += scenario.slot_ms;
        }
        task(at, [this, at] {
            trigger("slot");
            arm_slot_solve(at + 1);
        });
    }

    void run_solve() {
        solve_pending = false;
        std::vector<std::string> reasons;
        reasons.swap(solve_reasons);
        if (baseline) {
            return;
        }
        const TimeMs t = now();
        opt::Aggregation agg = imep.snapshot(grid, t);
        json notices = json::array();
        for (const auto& w : agg.warnings) {
            notices.push_back({{"vehicle_id", w.vehicle_id}, {"message", w.message}});
        }
        opt::ChargingSchedule sched = opt::solve_schedule(agg.instance);
        const auto violations = opt::verify(agg.instance, sched);
        opt::Flexibility flex = opt::forecast_availability(agg.instance, sched);
        opt::CosOutput cos = opt::to_charging_profiles(sched, agg.instance, next_profile);
        next_profile += static_cast<std::int64_t>(cos.profiles.size());
        ++solves;
        emit("solve", {{"reasons", reasons},
                       {"plan_start", agg.instance.start_ms},
                       {"instance", opt::to_json(agg.instance)},
                       {"schedule", opt::to_json(sched)},
                       {"flexibility", {{"up_kw", flex.up_kw}, {"down_kw", flex.down_kw}}},
                       {"forecast_only", cos.forecast_only},
                       {"violations", violations},
                       {"notices", notices}});
        for (const auto& v : violations) {
            warn("schedule violates " + v);
        }
        plan_instance = agg.instance;
        plan = sched;
        plan_flex = flex;
        plan_forecast_only = cos.forecast_only;
        plan_reasons = reasons;
        plan_solved_at = t;
        backend->publish(std::string(bus::kScheduleTopic), schedule_json().dump(), bus::Qos::AtMostOnce);
        for (auto& prof : cos.profiles) {
            dispatch(std::move(prof));
        }
    }

    void dispatch(ocpp::ChargingProfile prof) {
        const auto& st = cs->status(prof.cp_id);
        if (!st.transaction_id || st.connected_vehicle != prof.vehicle_id ||
            (st.state != ocpp::CpState::Charging && st.state != ocpp::CpState::Discharging)) {
            return;
        }
        const TimeMs t = now();
        // hold the current limit until the plan starts
        const TimeMs head_s = (prof.valid_from - t + kMsPerSecond - 1) / kMsPerSecond;
        double head = 0.0;
        const auto prev = last_sent.find(prof.cp_id);
        if (prev != last_sent.end()) {
            head = prev->second.limit_at(t).value_or(0.0);
        }
        std::vector<ocpp::SchedulePeriod> periods;
        if (head_s > 0) {
            periods.push_back({0, head});
        }
        for (const auto& p : prof.periods) {
            if (!periods.empty() && periods.back().limit_kw == p.limit_kw) {
                continue;
            }
            periods.push_back({p.start_offset_s + head_s, p.limit_kw});
        }
        prof.valid_from -= head_s * kMsPerSecond;
        prof.periods = std::move(periods);
        if (prev != last_sent.end() && same_from(prev->second, prof, t)) {
            return;
        }
        send_profile(prof);
    }

    void send_profile(const ocpp::ChargingProfile& prof) {
        ++profiles_sent;
        emit("profile", {{"phase", "sent"}, {"cp_id", prof.cp_id}, {"profile", profile_json(prof)}});
        last_sent[prof.cp_id] = prof;
        cs->send_charging_profile(prof.cp_id, prof);
    }

    /// Uncoordinated charging: in plug-in order each vehicle takes its full
    /// rate out of whatever the connection has left, slot by slot. Capacity is
    /// only handed on when a vehicle stops drawing, so nothing overshoots.
    void baseline_rebalance() {
        const TimeMs t = now();
        const TimeMs first = (t / scenario.slot_ms + 1) * scenario.slot_ms;
        const TimeMs end = std::max(first, scenario.duration_ms);
        std::vector<TimeMs> starts{t};
        for (TimeMs b = first; b < end; b += scenario.slot_ms) {
            starts.push_back(b);
        }
        std::vector<double> used(starts.size(), 0.0);
        for (const auto& cp_id : baseline_order) {
            const auto& st = cs->status(cp_id);
            double want = st.ev_max_charge_kw;
            if (st.connected_vehicle) {
                const auto it = vehicles.find(*st.connected_vehicle);
                if (it != vehicles.end() && it->second.charge_blocked) {
                    want = 0.0;
                }
            }
            ocpp::ChargingProfile prof;
            prof.cp_id = cp_id;
            prof.vehicle_id = st.connected_vehicle.value_or("");
            // whole seconds so the periods land exactly on the boundaries
            prof.valid_from = t / 1000 * 1000;
            prof.valid_to = end + 24 * kMsPerHour;
            for (std::size_t k = 0; k < starts.size(); ++k) {
                const double a = snap(std::max(0.0, std::min(want, grid.site_limit_at(starts[k]) - used[k])));
                used[k] += a;
                if (prof.periods.empty() || prof.periods.back().limit_kw != a) {
                    prof.periods.push_back({(std::max(starts[k], prof.valid_from) - prof.valid_from) / 1000, a});
                }
            }
            const auto prev = last_sent.find(cp_id);
            if (prev != last_sent.end() && same_from(prev->second, prof, t)) {
                continue;
            }
            prof.profile_id = next_profile++;
            send_profile(prof);
        }
    }

    // ---- reservations ---------------------------------------------------------

    void set_booking_state(Booking& b, opt::ReservationState s) {
        b.r.state = s;
        imep.ingest(opt::ReservationEvent{now(), b.r});
        emit("reservation", opt::to_json(b.r));
    }

    void check_booking(const std::string& vid, const std::string& cp_id, TimeMs start, TimeMs end) const {
        if (!vehicles.count(vid)) {
            throw SvcError(SvcErrc::UnknownVehicle, "unknown vehicle '" + vid + "'");
        }
        if (!cps.count(cp_id)) {
            throw SvcError(SvcErrc::UnknownChargePoint, "unknown charge point '" + cp_id + "'");
        }
        if (end <= start) {
            throw SvcError(SvcErrc::InvalidWindow, "window end must be after its start");
        }
        if (end <= now()) {
            throw SvcError(SvcErrc::InvalidWindow, "window has already ended");
        }
        for (const auto& [rid, b] : bookings) {
            if (b.r.state == opt::ReservationState::Active && b.r.overlaps(start, end) &&
                (b.r.cp_id == cp_id || b.r.vehicle_id == vid)) {
                throw SvcError(SvcErrc::Conflict, "overlaps reservation " + std::to_string(rid));
            }
        }
    }

    json book(const std::string& vid, const std::string& cp_id, TimeMs start, TimeMs end, bool checked) {
        if (!checked) {
            check_booking(vid, cp_id, start, end);
        }
        Booking& b = bookings[next_reservation];
        b.r = opt::Reservation{next_reservation++, vid, cp_id, start, end, opt::ReservationState::Active};
        set_booking_state(b, opt::ReservationState::Active);
        const std::int64_t rid = b.r.reservation_id;
        // the hold must be in place when the vehicle can first arrive
        task(std::max(start - scenario.dispatch_lead_ms, now()), [this, rid] {
            Booking& bk = bookings.at(rid);
            if (bk.r.state == opt::ReservationState::Active) {
                bk.hold_sent = true;
                cs->send_reserve_now(bk.r.cp_id, {rid, bk.r.vehicle_id, bk.r.end_ms});
            }
        });
        task(end, [this, rid] {
            Booking& bk = bookings.at(rid);
            if (bk.r.state == opt::ReservationState::Active) {
                set_booking_state(bk, opt::ReservationState::Expired);
                trigger("reservation_expired");
            }
        });
        trigger("reservation");
        return opt::to_json(b.r);
    }

    void check_cancel(std::int64_t rid) const {
        const auto it = bookings.find(rid);
        if (it == bookings.end()) {
            throw SvcError(SvcErrc::UnknownReservation, "unknown reservation " + std::to_string(rid));
        }
        if (it->second.r.state != opt::ReservationState::Active) {
            throw SvcError(SvcErrc::Conflict, "reservation " + std::to_string(rid) + " is " +
                                                  std::string(opt::to_string(it->second.r.state)));
        }
    }

    json cancel(std::int64_t rid, bool checked) {
        if (!checked) {
            check_cancel(rid);
        }
        Booking& b = bookings.at(rid);
        set_booking_state(b, opt::ReservationState::Cancelled);
        if (b.hold_sent) {
            cs->send_cancel_reservation(b.r.cp_id, rid);
        }
        trigger("reservation_cancelled");
        return opt::to_json(b.r);
    }

    // ---- API inputs -----------------------------------------------------------

    opt::DriverPreference parse_preference(const std::string& vid, const json& body) const {
        if (!vehicles.count(vid)) {
            throw SvcError(SvcErrc::UnknownVehicle, "unknown vehicle '" + vid + "'");
        }
        if (!body.is_object()) {
            throw SvcError(SvcErrc::BadRequest, "body must be a JSON object");
        }
        static const std::set<std::string> known{"vehicle_id",   "departure_time", "required_energy_kwh", "trip_class",
                                                 "soc_floor",    "v2g_consent",    "arrival_time"};
        for (const auto& [k, val] : body.items()) {
            if (!known.count(k)) {
                throw SvcError(SvcErrc::BadRequest, "unknown field '" + k + "'");
            }
        }
        opt::DriverPreference p;
        p.vehicle_id = vid;
        try {
            if (body.contains("vehicle_id") && body["vehicle_id"].get<std::string>() != vid) {
                throw SvcError(SvcErrc::BadRequest, "vehicle_id does not match the path");
            }
            if (!body.contains("departure_time")) {
                throw SvcError(SvcErrc::BadRequest, "departure_time is required");
            }
            p.departure_time = time_value(body, "departure_time");
            if (body.contains("required_energy_kwh") && !body["required_energy_kwh"].is_null()) {
                p.required_energy_kwh = body["required_energy_kwh"].get<double>();
            }
            if (body.contains("trip_class") && !body["trip_class"].is_null()) {
                p.trip_class = opt::trip_class_from_string(body["trip_class"].get<std::string>());
            }
            if (body.contains("soc_floor")) {
                p.soc_floor = body["soc_floor"].get<double>();
            }
            if (body.contains("v2g_consent")) {
                p.v2g_consent = body["v2g_consent"].get<bool>();
            }
            if (body.contains("arrival_time") && !body["arrival_time"].is_null()) {
                p.arrival_time = time_value(body, "arrival_time");
            }
        } catch (const SvcError&) {
            throw;
        } catch (const std::exception& e) {
            throw SvcError(SvcErrc::BadRequest, e.what());
        }
        p.submitted_at = now();
        if (p.soc_floor < 0.0 || p.soc_floor > 1.0) {
            throw SvcError(SvcErrc::InvalidPreference, "soc_floor must lie in [0,1]");
        }
        check_preference(p);
        return p;
    }

    json set_preferences(const std::string& vid, const json& body) {
        const opt::DriverPreference p = parse_preference(vid, body);
        emit("api.preference", {{"vehicle_id", vid}, {"body", body}});
        emit("preference", opt::to_json(p));
        accept_preference(p, "api.preference");
        if (!baseline) {
            solve_reasons.clear();
            solve_reasons.push_back("api.preference");
            run_solve();
        }
        json out = {{"vehicle_id", vid}, {"preference", opt::to_json(p)}};
        out["plan"] = vehicle_plan(vid);
        return out;
    }

    json create_reservation(const json& body) {
        std::string vid;
        std::string cp_id;
        TimeMs start = 0;
        TimeMs end = 0;
        try {
            if (!body.is_object()) {
                throw std::invalid_argument("body must be a JSON object");
            }
            vid = body.at("vehicle_id").get<std::string>();
            cp_id = body.at("cp_id").get<std::string>();
            const json& w = body.at("window");
            if (w.is_array() && w.size() == 2) {
                const json o = {{"start", w[0]}, {"end", w[1]}};
                start = time_value(o, "start");
                end = time_value(o, "end");
            } else {
                start = time_value(w, "start");
                end = time_value(w, "end");
            }
        } catch (const std::exception& e) {
            throw SvcError(SvcErrc::BadRequest, e.what());
        }
        check_booking(vid, cp_id, start, end);
        emit("api.reservation", {{"body", body}});
        return book(vid, cp_id, start, end, true);
    }

    json cancel_reservation(std::int64_t rid) {
        check_cancel(rid);
        emit("api.cancel_reservation", {{"reservation_id", rid}});
        return cancel(rid, true);
    }

    // ---- views ----------------------------------------------------------------

    json vehicle_plan(const std::string& vid) const {
        if (!plan || !plan_instance) {
            return nullptr;
        }
        const opt::VehicleRecord* rec = plan_instance->find(vid);
        const auto it = plan->power_kw.find(vid);
        if (!rec || it == plan->power_kw.end()) {
            return nullptr;
        }
        const auto traj = opt::energy_trajectory(*rec, it->second, plan_instance->slot_hours);
        json soc = json::array();
        for (double e : traj) {
            soc.push_back(rec->capacity_kwh > 0 ? e / rec->capacity_kwh : 0.0);
        }
        const auto um = plan->objective.unmet_energy_kwh.find(vid);
        const double unmet = um == plan->objective.unmet_energy_kwh.end() ? 0.0 : um->second;
        const int we = std::clamp(rec->window_end, 0, static_cast<int>(traj.size()) - 1);
        return {{"plan_start", plan_instance->start_ms},
                {"slot_ms", scenario.slot_ms},
                {"power_kw", it->second},
                {"soc", soc},
                {"window", {rec->window_start, rec->window_end}},
                {"target_energy_kwh", rec->target_energy_kwh},
                {"predicted_departure_soc", soc[static_cast<std::size_t>(we)]},
                {"unmet_energy_kwh", unmet},
                {"feasible", unmet <= 1e-6},
                {"forecast_only", std::find(plan_forecast_only.begin(), plan_forecast_only.end(), vid) !=
                                      plan_forecast_only.end()}};
    }

    json chargepoints_json() const {
        json out = json::array();
        for (const auto& [id, c] : cps) {
            json j = status_json(cs->status(id));
            j["applied_kw"] = c.sim->applied_kw();
            const auto& m = c.sim->meter();
            const double dt = ms_to_hours(now() - m.last_update());
            j["import_kwh"] = m.import_kwh() + std::max(0.0, m.power_kw()) * dt;
            j["export_kwh"] = m.export_kwh() + std::max(0.0, -m.power_kw()) * dt;
            out.push_back(j);
        }
        return out;
    }

    json vehicles_json() const {
        json out = json::array();
        for (const auto& [id, v] : vehicles) {
            const ev::VehicleState s = state_at(v, now());
            const auto view = imep.vehicles().find(id);
            json j = {{"vehicle_id", id},
                      {"presence", std::string(ev::to_string(s.presence.kind))},
                      {"charge_point", v.cp ? json(*v.cp) : json(nullptr)},
                      {"capacity_kwh", s.capacity_kwh},
                      {"power_kw", v.power_kw},
                      {"soc_actual", s.soc}};
            if (view != imep.vehicles().end() && view->second.soc) {
                j["soc"] = *view->second.soc;
                j["soc_sampled_at"] = view->second.soc_at;
            } else {
                j["soc"] = nullptr;
                j["soc_sampled_at"] = nullptr;
            }
            j["preference"] = v.pref ? opt::to_json(*v.pref) : json(nullptr);
            j["reservation"] = nullptr;
            for (const auto& [rid, b] : bookings) {
                if (b.r.vehicle_id == id && b.r.state == opt::ReservationState::Active) {
                    j["reservation"] = opt::to_json(b.r);
                    break;
                }
            }
            j["plan"] = vehicle_plan(id);
            j["departure"] = v.departure ? *v.departure : json(nullptr);
            out.push_back(j);
        }
        return out;
    }

    json schedule_json() const {
        json j = {{"mode", baseline ? "baseline" : "optimized"}, {"slot_ms", scenario.slot_ms}};
        if (!plan || !plan_instance) {
            j["solved_at"] = nullptr;
            return j;
        }
        const auto& in = *plan_instance;
        json starts = json::array();
        json site = json::array();
        for (int k = 0; k < in.slots(); ++k) {
            starts.push_back(in.start_ms + k * scenario.slot_ms);
            double s = 0.0;
            for (const auto& [vid, p] : plan->power_kw) {
                s += p[static_cast<std::size_t>(k)];
            }
            site.push_back(snap(s));
        }
        j["solved_at"] = plan_solved_at;
        j["reasons"] = plan_reasons;
        j["plan_start"] = in.start_ms;
        j["slot_start"] = starts;
        j["site_limit_kw"] = in.site_limit_kw;
        j["price"] = in.price;
        j["power_kw"] = plan->power_kw;
        j["site_kw"] = site;
        j["objective"] = opt::to_json(plan->objective);
        j["infeasible_targets"] = plan->infeasible_targets;
        j["forecast_only"] = plan_forecast_only;
        j["flexibility"] = {{"up_kw", plan_flex->up_kw}, {"down_kw", plan_flex->down_kw}};
        return j;
    }

    json reservations_json() const {
        json out = json::array();
        for (const auto& [rid, b] : bookings) {
            out.push_back(opt::to_json(b.r));
        }
        return out;
    }

    json metrics_json() const {
        json per = json::object();
        for (const auto& [id, v] : vehicles) {
            const ev::VehicleState s = state_at(v, now());
            per[id] = {{"soc", s.soc},
                       {"departure_soc", v.departure ? v.departure->at("soc") : json(nullptr)},
                       {"unmet_energy_kwh", v.departure ? v.departure->at("unmet_energy_kwh") : json(nullptr)}};
        }
        double imp = 0.0;
        double exp = 0.0;
        for (const auto& cp : chargepoints_json()) {
            imp += cp["import_kwh"].get<double>();
            exp += cp["export_kwh"].get<double>();
        }
        json rtt = {{"count", rtts.size()}};
        if (!rtts.empty()) {
            std::vector<TimeMs> sorted = rtts;
            std::sort(sorted.begin(), sorted.end());
            auto rank = [&](double p) {
                const auto n = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
                return sorted[std::max<std::size_t>(n, 1) - 1];
            };
            rtt["p50_ms"] = rank(0.5);
            rtt["p99_ms"] = rank(0.99);
            rtt["max_ms"] = sorted.back();
            json hist = json::object();
            for (TimeMs x : sorted) {
                hist[std::to_string(x)] = hist.value(std::to_string(x), 0) + 1;
            }
            rtt["histogram_ms"] = hist;
        }
        json samples = json::array();
        for (const auto& [t, kw] : site_samples) {
            samples.push_back({t, kw});
        }
        double unmet_total = 0.0;
        for (const auto& [id, v] : vehicles) {
            if (v.departure) {
                unmet_total += v.departure->at("unmet_energy_kwh").get<double>();
            }
        }
        return {{"mode", baseline ? "baseline" : "optimized"},
                {"sim_time_ms", now()},
                {"peak_site_kw", snap(std::max(peak_site_kw, site_kw()))},
                {"site_kw", snap(site_kw())},
                {"total_energy_kwh", imp},
                {"v2g_energy_kwh", exp},
                {"unmet_energy_kwh", snap(unmet_total)},
                {"vehicles", per},
                {"site_load", samples},
                {"ocpp_rtt", rtt},
                {"solves", solves},
                {"profiles", {{"sent", profiles_sent}, {"accepted", profiles_accepted}, {"rejected", profiles_rejected}}},
                {"warnings", warnings},
                {"bus", broker->stats().to_json()}};
    }
};

Engine::Engine(Scenario scenario, EngineOptions options, RecordSink sink)
    : impl_(std::make_unique<Impl>(std::move(scenario), options, std::move(sink))) {}

Engine::~Engine() = default;

TimeMs Engine::now() const { return impl_->now(); }

std::optional<TimeMs> Engine::next_event_time() const {
    return impl_->q.empty() ? std::nullopt : std::optional<TimeMs>(impl_->q.next_time());
}

std::uint64_t Engine::next_seq() const { return impl_->next_seq; }
const Scenario& Engine::scenario() const { return impl_->scenario; }
bool Engine::baseline() const { return impl_->baseline; }

void Engine::run_until(TimeMs t) { impl_->run_until(t); }
bool Engine::step() { return impl_->step(); }

json Engine::set_preferences(const std::string& vehicle_id, const json& body) {
    json out = impl_->set_preferences(vehicle_id, body);
    impl_->rearm();
    return out;
}

json Engine::create_reservation(const json& body) {
    json out = impl_->create_reservation(body);
    impl_->rearm();
    return out;
}

json Engine::cancel_reservation(std::int64_t reservation_id) {
    json out = impl_->cancel_reservation(reservation_id);
    impl_->rearm();
    return out;
}

void Engine::apply_input(const EventRecord& record) {
    const json& p = record.payload;
    if (record.kind == "api.preference") {
        set_preferences(p.at("vehicle_id").get<std::string>(), p.at("body"));
    } else if (record.kind == "api.reservation") {
        create_reservation(p.at("body"));
    } else if (record.kind == "api.cancel_reservation") {
        cancel_reservation(p.at("reservation_id").get<std::int64_t>());
    } else {
        throw SvcError(SvcErrc::LogInvalid, "not an input record: " + record.kind);
    }
}

json Engine::chargepoints_json() const { return impl_->chargepoints_json(); }
json Engine::vehicles_json() const { return impl_->vehicles_json(); }
json Engine::schedule_json() const { return impl_->schedule_json(); }
json Engine::reservations_json() const { return impl_->reservations_json(); }
json Engine::metrics_json() const { return impl_->metrics_json(); }

json Engine::state_json() const {
    return {{"sim_time_ms", now()},
            {"next_seq", next_seq()},
            {"chargepoints", chargepoints_json()},
            {"vehicles", vehicles_json()},
            {"schedule", schedule_json()},
            {"reservations", reservations_json()},
            {"metrics", metrics_json()}};
}

json run_scenario(const Scenario& scenario, EngineOptions options, std::optional<TimeMs> until, Engine::RecordSink sink) {
    Engine engine(scenario, options, std::move(sink));
    engine.run_until(until.value_or(scenario.duration_ms));
    return engine.metrics_json();
}

} // namespace v2g::svc

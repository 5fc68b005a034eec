// SPDX-License-Identifier: Apache-2.0
#include "v2g/service/scenario.hpp"

#include "v2g/bus/topic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

namespace v2g::svc {

using nlohmann::json;

std::string_view to_string(SvcErrc code) {
    switch (code) {
    case SvcErrc::ScenarioInvalid:
        return "ScenarioInvalid";
    case SvcErrc::UnknownVehicle:
        return "UnknownVehicle";
    case SvcErrc::UnknownChargePoint:
        return "UnknownChargePoint";
    case SvcErrc::UnknownReservation:
        return "UnknownReservation";
    case SvcErrc::Conflict:
        return "Conflict";
    case SvcErrc::DepartureInPast:
        return "DepartureInPast";
    case SvcErrc::InvalidPreference:
        return "InvalidPreference";
    case SvcErrc::InvalidWindow:
        return "InvalidWindow";
    case SvcErrc::BadRequest:
        return "BadRequest";
    case SvcErrc::LogInvalid:
        return "LogInvalid";
    }
    return "?";
}

const VehicleSpec* Scenario::vehicle(const std::string& id) const {
    for (const auto& v : vehicles) {
        if (v.state.vehicle_id == id) {
            return &v;
        }
    }
    return nullptr;
}

const ChargePointSpec* Scenario::charge_point(const std::string& id) const {
    for (const auto& c : charge_points) {
        if (c.id == id) {
            return &c;
        }
    }
    return nullptr;
}

bus::LinkProfile Scenario::link_for(const std::string& client_id) const {
    const auto it = links.find(client_id);
    return it == links.end() ? default_link : it->second;
}

opt::GridConditions Scenario::grid() const {
    opt::GridConditions g;
    g.slot_ms = slot_ms;
    g.horizon_slots = horizon_slots;
    g.price = price;
    g.site_limit_kw = site_limit_kw;
    g.peak_step_kw = peak_step_kw;
    g.dispatch_lead_ms = dispatch_lead_ms;
    g.trips = trips;
    return g;
}

const std::vector<std::string>& scripted_event_types() {
    static const std::vector<std::string> t{"preference", "reservation", "cancel_reservation", "arrive", "plug_in",
                                            "unplug",     "drive",       "fault",              "reset"};
    return t;
}

namespace {

[[noreturn]] void invalid(const std::string& where, const std::string& what) {
    throw SvcError(SvcErrc::ScenarioInvalid, where.empty() ? what : where + ": " + what);
}

std::string ms_text(TimeMs ms) { return std::to_string(ms) + "ms"; }

// Field access on one JSON object with a path for error messages and a check
// for keys nobody asked for.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            invalid(path_, "expected a table");
        }
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) {
                invalid(at(key), "required");
            }
            return *fallback;
        }
        const json& v = j_.at(key);
        if (!v.is_number()) {
            invalid(at(key), "expected a number");
        }
        const double d = v.get<double>();
        if (!std::isfinite(d)) {
            invalid(at(key), "must be finite");
        }
        return d;
    }
    std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) {
                invalid(at(key), "required");
            }
            return *fallback;
        }
        const json& v = j_.at(key);
        if (!v.is_number_integer()) {
            invalid(at(key), "expected an integer");
        }
        return v.get<std::int64_t>();
    }
    std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) {
                invalid(at(key), "required");
            }
            return *fallback;
        }
        const json& v = j_.at(key);
        if (!v.is_string()) {
            invalid(at(key), "expected a string");
        }
        return v.get<std::string>();
    }
    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) {
            return fallback;
        }
        const json& v = j_.at(key);
        if (!v.is_boolean()) {
            invalid(at(key), "expected true or false");
        }
        return v.get<bool>();
    }
    /// Duration strings ("90s", "1h30m", "250ms") or bare numbers of seconds.
    TimeMs duration(const std::string& key, std::optional<TimeMs> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) {
                invalid(at(key), "required");
            }
            return *fallback;
        }
        const json& v = j_.at(key);
        if (v.is_number()) {
            const double s = v.get<double>();
            if (!std::isfinite(s)) {
                invalid(at(key), "must be finite");
            }
            return static_cast<TimeMs>(std::llround(s * 1000.0));
        }
        if (!v.is_string()) {
            invalid(at(key), "expected a duration such as \"15m\"");
        }
        try {
            return parse_duration(v.get<std::string>());
        } catch (const std::exception& e) {
            invalid(at(key), e.what());
        }
    }
    std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
        if (!has(key)) {
            return fallback;
        }
        const json& v = j_.at(key);
        if (v.is_number()) {
            return {v.get<double>()};
        }
        if (!v.is_array() || v.empty()) {
            invalid(at(key), "expected a number or a non-empty array of numbers");
        }
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number() || !std::isfinite(v[i].get<double>())) {
                invalid(at(key) + "[" + std::to_string(i) + "]", "expected a number");
            }
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    void no_extra_keys() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) {
                invalid(at(k), "unknown key");
            }
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json toml_to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        json out = json::object();
        for (const auto& [k, v] : *t) {
            out[std::string(k.str())] = toml_to_json(v);
        }
        return out;
    }
    if (const auto* a = node.as_array()) {
        json out = json::array();
        for (const auto& v : *a) {
            out.push_back(toml_to_json(v));
        }
        return out;
    }
    if (const auto* s = node.as_string()) {
        return s->get();
    }
    if (const auto* i = node.as_integer()) {
        return i->get();
    }
    if (const auto* f = node.as_floating_point()) {
        return f->get();
    }
    if (const auto* b = node.as_boolean()) {
        return b->get();
    }
    throw SvcError(SvcErrc::ScenarioInvalid, "TOML date/time values are not supported; use duration strings");
}

bus::LinkProfile parse_link(const json& j, const std::string& path) {
    Fields f(j, path);
    bus::LinkProfile l;
    if (f.has("latency_ms")) {
        l.latency_min_ms = l.latency_max_ms = f.integer("latency_ms");
    } else {
        l.latency_min_ms = f.integer("latency_min_ms", 0);
        l.latency_max_ms = f.integer("latency_max_ms", l.latency_min_ms);
    }
    l.drop_probability = f.number("drop_probability", 0.0);
    l.seed = static_cast<std::uint64_t>(f.integer("seed", 0));
    if (f.has("scripted_drops")) {
        const json& d = f.raw("scripted_drops");
        if (!d.is_array()) {
            invalid(f.at("scripted_drops"), "expected an array of integers");
        }
        for (const auto& x : d) {
            if (!x.is_number_unsigned()) {
                invalid(f.at("scripted_drops"), "expected an array of non-negative integers");
            }
            l.scripted_drops.insert(x.get<std::uint64_t>());
        }
    }
    f.no_extra_keys();
    try {
        bus::validate(l);
    } catch (const std::exception& e) {
        invalid(path, e.what());
    }
    if (l.drop_probability >= 1.0) {
        invalid(f.at("drop_probability"), "must be below 1");
    }
    return l;
}

json link_json(const bus::LinkProfile& l) {
    json j = {{"latency_min_ms", l.latency_min_ms},
              {"latency_max_ms", l.latency_max_ms},
              {"drop_probability", l.drop_probability},
              {"seed", l.seed}};
    if (!l.scripted_drops.empty()) {
        j["scripted_drops"] = l.scripted_drops;
    }
    return j;
}

ev::Presence parse_presence(const std::string& where, const std::string& s, const std::string& cp) {
    if (s == "en_route") {
        return ev::Presence::en_route();
    }
    if (s == "parked") {
        return ev::Presence::parked();
    }
    if (s == "plugged_in") {
        if (cp.empty()) {
            invalid(where, "a plugged-in vehicle needs charge_point");
        }
        return ev::Presence::plugged_in(cp);
    }
    invalid(where, "presence must be en_route, parked or plugged_in");
}

std::string presence_name(ev::PresenceKind k) {
    switch (k) {
    case ev::PresenceKind::EnRoute:
        return "en_route";
    case ev::PresenceKind::ParkedUnplugged:
        return "parked";
    case ev::PresenceKind::PluggedIn:
        return "plugged_in";
    }
    return "?";
}

// Time fields inside scripted events, stored as ms.
const std::set<std::string>& event_time_fields() {
    static const std::set<std::string> f{"departure", "arrival", "start", "end"};
    return f;
}

ScriptedEvent parse_event(Fields f, const Scenario& s, TimeMs previous) {
    ScriptedEvent e;
    e.at = f.duration("at");
    if (e.at < 0) {
        invalid(f.at("at"), "must not be negative");
    }
    if (e.at < previous) {
        invalid(f.at("at"), "scripted event timestamps must be non-decreasing");
    }
    e.type = f.string("type");
    const auto& types = scripted_event_types();
    if (std::find(types.begin(), types.end(), e.type) == types.end()) {
        invalid(f.at("type"), "unknown event type '" + e.type + "'");
    }
    auto vehicle = [&] {
        const std::string id = f.string("vehicle");
        if (!s.vehicle(id)) {
            invalid(f.at("vehicle"), "unknown vehicle '" + id + "'");
        }
        e.args["vehicle"] = id;
        return id;
    };
    auto charge_point = [&] {
        const std::string id = f.string("charge_point");
        if (!s.charge_point(id)) {
            invalid(f.at("charge_point"), "unknown charge point '" + id + "'");
        }
        e.args["charge_point"] = id;
    };
    auto time_field = [&](const std::string& key, bool required) {
        if (!required && !f.has(key)) {
            return;
        }
        e.args[key] = f.duration(key);
    };
    if (e.type == "preference") {
        const std::string id = vehicle();
        time_field("departure", true);
        if (e.args["departure"].get<TimeMs>() <= e.at) {
            invalid(f.at("departure"), "departure must be after the event time");
        }
        time_field("arrival", false);
        if (f.has("required_energy_kwh")) {
            const double kwh = f.number("required_energy_kwh");
            if (kwh < 0 || kwh > s.vehicle(id)->state.capacity_kwh) {
                invalid(f.at("required_energy_kwh"), "must lie in [0, capacity]");
            }
            e.args["required_energy_kwh"] = kwh;
        }
        if (f.has("trip_class")) {
            const std::string tc = f.string("trip_class");
            try {
                opt::trip_class_from_string(tc);
            } catch (const std::exception&) {
                invalid(f.at("trip_class"), "must be Short or Long");
            }
            e.args["trip_class"] = tc;
        }
        if (!e.args.contains("required_energy_kwh") && !e.args.contains("trip_class")) {
            invalid(f.at("required_energy_kwh"), "required_energy_kwh or trip_class is required");
        }
        if (f.has("soc_floor")) {
            const double fl = f.number("soc_floor");
            if (fl < 0 || fl > 1) {
                invalid(f.at("soc_floor"), "must lie in [0,1]");
            }
            e.args["soc_floor"] = fl;
        }
        if (f.has("v2g_consent")) {
            e.args["v2g_consent"] = f.boolean("v2g_consent", true);
        }
    } else if (e.type == "reservation") {
        vehicle();
        charge_point();
        time_field("start", true);
        time_field("end", true);
        if (e.args["end"].get<TimeMs>() <= e.args["start"].get<TimeMs>()) {
            invalid(f.at("end"), "window end must be after its start");
        }
        if (e.args["end"].get<TimeMs>() <= e.at) {
            invalid(f.at("end"), "window must end after the event time");
        }
    } else if (e.type == "cancel_reservation") {
        const auto id = f.integer("reservation_id");
        if (id <= 0) {
            invalid(f.at("reservation_id"), "must be positive");
        }
        e.args["reservation_id"] = id;
    } else if (e.type == "plug_in") {
        vehicle();
        charge_point();
    } else if (e.type == "drive") {
        vehicle();
        const double km = f.number("distance_km");
        if (km < 0) {
            invalid(f.at("distance_km"), "must not be negative");
        }
        e.args["distance_km"] = km;
    } else if (e.type == "arrive" || e.type == "unplug") {
        vehicle();
    } else {
        charge_point();
    }
    f.no_extra_keys();
    return e;
}

} // namespace

Scenario scenario_from_json(const json& doc) {
    Fields f(doc, "");
    Scenario s;
    const auto version = f.integer("schema_version");
    if (version != kScenarioSchemaVersion) {
        invalid("schema_version", "unsupported version " + std::to_string(version) + " (expected 1)");
    }
    s.name = f.string("name", s.name);
    s.seed = static_cast<std::uint64_t>(f.integer("seed", 0));
    s.time_scale = f.number("time_scale", 0.0);
    if (s.time_scale < 0) {
        invalid("time_scale", "must not be negative");
    }
    const double slot_min = f.number("slot_width_min", 15.0);
    s.slot_ms = static_cast<TimeMs>(std::llround(slot_min * kMsPerMinute));
    if (s.slot_ms < kMsPerSecond || s.slot_ms % kMsPerSecond != 0) {
        invalid("slot_width_min", "must be a positive whole number of seconds");
    }
    s.horizon_slots = static_cast<int>(f.integer("horizon_slots", 96));
    if (s.horizon_slots < 1 || s.horizon_slots > 4 * 96) {
        invalid("horizon_slots", "must lie in [1, 384]");
    }
    s.site_limit_kw = f.numbers("site_limit_kw", {11.0});
    for (double l : s.site_limit_kw) {
        if (l < 0) {
            invalid("site_limit_kw", "limits must not be negative");
        }
    }
    s.price = f.numbers("price", {0.0});
    s.peak_step_kw = f.number("peak_step_kw", 0.0);
    if (s.peak_step_kw < 0) {
        invalid("peak_step_kw", "must not be negative");
    }
    s.dispatch_lead_ms = f.duration("dispatch_lead", kMsPerMinute);
    if (s.dispatch_lead_ms < 0 || s.dispatch_lead_ms >= s.slot_ms) {
        invalid("dispatch_lead", "must lie in [0, slot width)");
    }
    s.telemetry_interval_ms = f.duration("telemetry_interval", kMsPerMinute);
    if (s.telemetry_interval_ms <= 0) {
        invalid("telemetry_interval", "must be positive");
    }
    s.meter_interval_ms = f.duration("meter_interval", 0);
    if (s.meter_interval_ms < 0) {
        invalid("meter_interval", "must not be negative");
    }
    s.duration_ms = f.duration("duration", 24 * kMsPerHour);
    if (s.duration_ms < 0) {
        invalid("duration", "must not be negative");
    }
    s.baseline = f.boolean("baseline", false);
    s.bus_token = f.string("bus_token", "");
    if (f.has("trips")) {
        Fields t(f.raw("trips"), "trips");
        s.trips.short_kwh = t.number("short_kwh", s.trips.short_kwh);
        s.trips.long_kwh = t.number("long_kwh", s.trips.long_kwh);
        if (s.trips.short_kwh < 0 || s.trips.long_kwh < 0) {
            invalid("trips", "energies must not be negative");
        }
        t.no_extra_keys();
    }
    if (f.has("links")) {
        Fields l(f.raw("links"), "links");
        if (l.has("default")) {
            s.default_link = parse_link(l.raw("default"), "links.default");
        }
        if (l.has("clients")) {
            const json& c = l.raw("clients");
            if (!c.is_object()) {
                invalid("links.clients", "expected a table");
            }
            for (const auto& [id, v] : c.items()) {
                s.links[id] = parse_link(v, "links.clients." + id);
            }
        }
        l.no_extra_keys();
    }
    if (f.has("charge_points")) {
        const json& arr = f.raw("charge_points");
        if (!arr.is_array()) {
            invalid("charge_points", "expected an array of tables");
        }
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string where = "charge_points[" + std::to_string(i) + "]";
            Fields c(arr[i], where);
            ChargePointSpec cp;
            cp.id = c.string("id");
            if (cp.id.empty() || !bus::is_valid_topic(cp.id) || cp.id.find('/') != std::string::npos) {
                invalid(c.at("id"), "must be a non-empty topic segment");
            }
            if (s.charge_point(cp.id)) {
                invalid(c.at("id"), "duplicate charge point '" + cp.id + "'");
            }
            cp.rating_kw = c.number("rating_kw");
            if (!(cp.rating_kw > 0)) {
                invalid(c.at("rating_kw"), "must be positive");
            }
            cp.bidirectional = c.boolean("bidirectional", true);
            c.no_extra_keys();
            s.charge_points.push_back(cp);
        }
    }
    if (f.has("vehicles")) {
        const json& arr = f.raw("vehicles");
        if (!arr.is_array()) {
            invalid("vehicles", "expected an array of tables");
        }
        std::set<std::string> occupied;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string where = "vehicles[" + std::to_string(i) + "]";
            Fields v(arr[i], where);
            VehicleSpec spec;
            ev::VehicleState& st = spec.state;
            st.vehicle_id = v.string("id");
            if (st.vehicle_id.empty() || st.vehicle_id.find_first_of("/+#") != std::string::npos) {
                invalid(v.at("id"), "must be a non-empty topic segment");
            }
            if (s.vehicle(st.vehicle_id)) {
                invalid(v.at("id"), "duplicate vehicle '" + st.vehicle_id + "'");
            }
            st.soc = v.number("soc");
            st.capacity_kwh = v.number("capacity_kwh", st.capacity_kwh);
            st.max_charge_kw = v.number("max_charge_kw", st.max_charge_kw);
            st.max_discharge_kw = v.number("max_discharge_kw", st.max_discharge_kw);
            st.charge_efficiency = v.number("charge_efficiency", st.charge_efficiency);
            st.discharge_efficiency = v.number("discharge_efficiency", st.discharge_efficiency);
            st.consumption_kwh_per_km = v.number("consumption_kwh_per_km", st.consumption_kwh_per_km);
            const std::string cp = v.string("charge_point", "");
            st.presence = parse_presence(v.at("presence"), v.string("presence", "parked"), cp);
            if (!cp.empty()) {
                if (st.presence.kind != ev::PresenceKind::PluggedIn) {
                    invalid(v.at("charge_point"), "only a plugged-in vehicle names a charge point");
                }
                if (!s.charge_point(cp)) {
                    invalid(v.at("charge_point"), "unknown charge point '" + cp + "'");
                }
                if (!occupied.insert(cp).second) {
                    invalid(v.at("charge_point"), "charge point '" + cp + "' already has a vehicle");
                }
            }
            try {
                ev::validate(st);
            } catch (const ev::EvError& e) {
                invalid(where, e.what());
            }
            v.no_extra_keys();
            s.vehicles.push_back(std::move(spec));
        }
    }
    if (f.has("events")) {
        const json& arr = f.raw("events");
        if (!arr.is_array()) {
            invalid("events", "expected an array of tables");
        }
        TimeMs previous = 0;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            ScriptedEvent e = parse_event(Fields(arr[i], "events[" + std::to_string(i) + "]"), s, previous);
            previous = e.at;
            s.events.push_back(std::move(e));
        }
    }
    f.no_extra_keys();
    return s;
}

Scenario scenario_from_toml(const std::string& text) {
    toml::table table;
    try {
        table = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << "line " << e.source().begin.line << ": " << e.description();
        throw SvcError(SvcErrc::ScenarioInvalid, os.str());
    }
    return scenario_from_json(toml_to_json(table));
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw SvcError(SvcErrc::ScenarioInvalid, "cannot open scenario file " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return scenario_from_toml(ss.str());
}

json to_json(const Scenario& s) {
    json cps = json::array();
    for (const auto& c : s.charge_points) {
        cps.push_back({{"id", c.id}, {"rating_kw", c.rating_kw}, {"bidirectional", c.bidirectional}});
    }
    json vs = json::array();
    for (const auto& v : s.vehicles) {
        const auto& st = v.state;
        json j = {{"id", st.vehicle_id},
                  {"soc", st.soc},
                  {"capacity_kwh", st.capacity_kwh},
                  {"max_charge_kw", st.max_charge_kw},
                  {"max_discharge_kw", st.max_discharge_kw},
                  {"charge_efficiency", st.charge_efficiency},
                  {"discharge_efficiency", st.discharge_efficiency},
                  {"consumption_kwh_per_km", st.consumption_kwh_per_km},
                  {"presence", presence_name(st.presence.kind)}};
        if (!st.presence.charge_point_id.empty()) {
            j["charge_point"] = st.presence.charge_point_id;
        }
        vs.push_back(std::move(j));
    }
    json es = json::array();
    for (const auto& e : s.events) {
        json j = e.args;
        for (const auto& k : event_time_fields()) {
            if (j.contains(k)) {
                j[k] = ms_text(j[k].get<TimeMs>());
            }
        }
        j["at"] = ms_text(e.at);
        j["type"] = e.type;
        es.push_back(std::move(j));
    }
    json clients = json::object();
    for (const auto& [id, l] : s.links) {
        clients[id] = link_json(l);
    }
    return {{"schema_version", kScenarioSchemaVersion},
            {"name", s.name},
            {"seed", s.seed},
            {"time_scale", s.time_scale},
            {"slot_width_min", static_cast<double>(s.slot_ms) / kMsPerMinute},
            {"horizon_slots", s.horizon_slots},
            {"site_limit_kw", s.site_limit_kw},
            {"price", s.price},
            {"peak_step_kw", s.peak_step_kw},
            {"dispatch_lead", ms_text(s.dispatch_lead_ms)},
            {"telemetry_interval", ms_text(s.telemetry_interval_ms)},
            {"meter_interval", ms_text(s.meter_interval_ms)},
            {"duration", ms_text(s.duration_ms)},
            {"baseline", s.baseline},
            {"bus_token", s.bus_token},
            {"trips", {{"short_kwh", s.trips.short_kwh}, {"long_kwh", s.trips.long_kwh}}},
            {"links", {{"default", link_json(s.default_link)}, {"clients", clients}}},
            {"charge_points", cps},
            {"vehicles", vs},
            {"events", es}};
}

} // namespace v2g::svc

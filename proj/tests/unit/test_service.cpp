// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "v2g/service/engine.hpp"
#include "v2g/service/replay.hpp"

using namespace v2g;
using namespace v2g::svc;
using nlohmann::json;

namespace {

const std::string kScenarios = std::string(V2G_SOURCE_DIR) + "/scenarios/";

const char* kSmall = R"(
schema_version = 1
name = "small"
seed = 3
slot_width_min = 15
horizon_slots = 16
site_limit_kw = [11.0]
price = [0.2, 0.3]
dispatch_lead = "30s"
duration = "3h"

[links.default]
latency_ms = 5

[[charge_points]]
id = "cp-1"
rating_kw = 11.0

[[charge_points]]
id = "cp-2"
rating_kw = 11.0

[[vehicles]]
id = "ev-1"
soc = 0.5
capacity_kwh = 40.0
max_charge_kw = 7.0
max_discharge_kw = 7.0
presence = "plugged_in"
charge_point = "cp-1"

[[vehicles]]
id = "ev-2"
soc = 0.3
capacity_kwh = 40.0
max_charge_kw = 7.0
max_discharge_kw = 7.0
presence = "en_route"
)";

SvcErrc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const SvcError& e) {
        return e.code();
    }
    FAIL("expected SvcError");
    return SvcErrc::LogInvalid;
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

struct Recorder {
    std::vector<std::string> lines;
    std::vector<EventRecord> records;
    Engine::RecordSink sink() {
        return [this](const EventRecord& r, const std::string& line) {
            records.push_back(r);
            lines.push_back(line);
        };
    }
    std::vector<EventRecord> of_kind(const std::string& kind) const {
        std::vector<EventRecord> out;
        for (const auto& r : records) {
            if (r.kind == kind) {
                out.push_back(r);
            }
        }
        return out;
    }
};

json find_cp(const json& cps, const std::string& id) {
    for (const auto& c : cps) {
        if (c["cp_id"] == id) {
            return c;
        }
    }
    return nullptr;
}

json find_vehicle(const json& vs, const std::string& id) {
    for (const auto& v : vs) {
        if (v["vehicle_id"] == id) {
            return v;
        }
    }
    return nullptr;
}

} // namespace

// ---- scenario -------------------------------------------------------------------

TEST_CASE("scenario: shipped scenarios load and survive the JSON round trip") {
    for (const char* name : {"two_ev_peak.toml", "pre_connection.toml", "demo.toml"}) {
        CAPTURE(name);
        const Scenario s = load_scenario(kScenarios + name);
        const json j = to_json(s);
        CHECK(to_json(scenario_from_json(j)) == j);
        CHECK(j["schema_version"] == kScenarioSchemaVersion);
    }
}

TEST_CASE("scenario: field values are converted to milliseconds") {
    const Scenario s = scenario_from_toml(kSmall);
    CHECK(s.slot_ms == 15 * kMsPerMinute);
    CHECK(s.dispatch_lead_ms == 30 * kMsPerSecond);
    CHECK(s.duration_ms == 3 * kMsPerHour);
    CHECK(s.link_for("anything").latency_min_ms == 5);
    REQUIRE(s.vehicle("ev-1"));
    CHECK(s.vehicle("ev-1")->state.presence.charge_point_id == "cp-1");
    CHECK(s.grid().price_at(15 * kMsPerMinute) == doctest::Approx(0.3));
}

TEST_CASE("scenario: validation names the offending element") {
    auto bad = [](const std::string& extra) { return std::string(kSmall) + extra; };
    CHECK(code_of([&] { scenario_from_toml("schema_version = 2\n"); }) == SvcErrc::ScenarioInvalid);
    CHECK(message_of([&] { scenario_from_toml("schema_version = 2\n"); }).find("schema_version") != std::string::npos);
    CHECK(message_of([&] { scenario_from_toml(bad("bogus_key = 1\n")); }).find("bogus_key") != std::string::npos);
    CHECK(message_of([&] { scenario_from_toml(bad("[[events]]\nat = \"1m\"\ntype = \"plug_in\"\nvehicle = \"ev-9\"\ncharge_point = \"cp-1\"\n")); })
              .find("ev-9") != std::string::npos);
    CHECK(code_of([&] { scenario_from_toml(bad("[[events]]\nat = \"1m\"\ntype = \"teleport\"\nvehicle = \"ev-1\"\n")); }) ==
          SvcErrc::ScenarioInvalid);
    CHECK(code_of([&] {
              scenario_from_toml(bad("[[events]]\nat = \"2h\"\ntype = \"unplug\"\nvehicle = \"ev-1\"\n"
                                     "[[events]]\nat = \"1h\"\ntype = \"unplug\"\nvehicle = \"ev-1\"\n"));
          }) == SvcErrc::ScenarioInvalid);
    CHECK(code_of([&] {
              scenario_from_toml(bad("[[events]]\nat = \"1h\"\ntype = \"preference\"\nvehicle = \"ev-1\"\n"
                                     "departure = \"30m\"\nrequired_energy_kwh = 5.0\n"));
          }) == SvcErrc::ScenarioInvalid);
    CHECK(code_of([&] {
              scenario_from_toml(bad("[[events]]\nat = \"0s\"\ntype = \"reservation\"\nvehicle = \"ev-2\"\n"
                                     "charge_point = \"cp-2\"\nstart = \"2h\"\nend = \"1h\"\n"));
          }) == SvcErrc::ScenarioInvalid);
    // a plugged vehicle needs its charge point
    std::string s = kSmall;
    s.replace(s.find("charge_point = \"cp-1\""), 21, "");
    CHECK(code_of([&] { scenario_from_toml(s); }) == SvcErrc::ScenarioInvalid);
    CHECK(code_of([&] { scenario_from_toml("this is = = not toml"); }) == SvcErrc::ScenarioInvalid);
}

// ---- event log -----------------------------------------------------------------

TEST_CASE("event log: lines are canonical and parse back") {
    EventRecord r{42, 1234, "meter", {{"z", 1}, {"a", {{"y", 2.5}, {"b", "x"}}}}};
    const std::string line = r.line();
    CHECK(line.find('\n') == std::string::npos);
    CHECK(line.find("\"kind\"") < line.find("\"payload\""));
    CHECK(line.find("\"a\"") < line.find("\"z\""));
    CHECK(EventRecord::parse(line) == r);
    CHECK(EventRecord::parse(line).line() == line);
    CHECK(is_input_kind("api.preference"));
    CHECK(is_input_kind("api.reservation"));
    CHECK(is_input_kind("api.cancel_reservation"));
    CHECK_FALSE(is_input_kind("solve"));
    CHECK_FALSE(is_input_kind("script.plug_in"));
}

TEST_CASE("event log: writer appends committed batches, reader reports bad lines") {
    const auto path = std::filesystem::temp_directory_path() / "v2g_test_log.ndjson";
    std::filesystem::remove(path);
    {
        EventLogWriter w(path.string());
        w.append(EventRecord{1, 0, "a", json::object()}.line());
        w.append(EventRecord{2, 5, "b", {{"k", 1}}}.line());
        w.commit();
        w.append(EventRecord{3, 9, "c", json::object()}.line());
    } // destructor commits the tail
    const auto log = read_log(path.string());
    REQUIRE(log.size() == 3);
    CHECK(log[1].payload["k"] == 1);
    CHECK(log[2].sim_time_ms == 9);
    {
        std::ofstream out(path, std::ios::app);
        out << "{not json\n";
    }
    CHECK(code_of([&] { read_log(path.string()); }) == SvcErrc::LogInvalid);
    CHECK(message_of([&] { read_log(path.string()); }).find("line 4") != std::string::npos);
    std::filesystem::remove(path);
}

// ---- engine ------------------------------------------------------------------------

TEST_CASE("engine: two-EV peak scenario, coordinated against uncoordinated") {
    const Scenario s = load_scenario(kScenarios + "two_ev_peak.toml");
    const json opt = run_scenario(s, {}, std::nullopt);
    const json base = run_scenario(s, {.baseline = true, .seed = std::nullopt}, std::nullopt);
    CHECK(opt["mode"] == "optimized");
    CHECK(base["mode"] == "baseline");
    CHECK(opt["peak_site_kw"].get<double>() == 4.0);
    CHECK(base["peak_site_kw"].get<double>() == 10.0);
    CHECK(opt["unmet_energy_kwh"].get<double>() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(opt["vehicles"]["ev-a"]["departure_soc"].get<double>() == doctest::Approx(0.75));
    CHECK(opt["vehicles"]["ev-b"]["departure_soc"].get<double>() == doctest::Approx(0.65));
    CHECK(opt["warnings"] == 0);
    CHECK(opt["profiles"]["rejected"] == 0);
}

TEST_CASE("engine: every solved schedule verifies and the realized load follows the plan") {
    Recorder rec;
    const Scenario s = load_scenario(kScenarios + "two_ev_peak.toml");
    Engine e(s, {}, rec.sink());
    e.run_until(s.duration_ms);
    const auto solves = rec.of_kind("solve");
    REQUIRE(solves.size() >= 4);
    for (const auto& r : solves) {
        CHECK(r.payload["violations"].empty());
    }
    for (const auto& r : rec.of_kind("site.sample")) {
        CHECK(r.payload["site_kw"].get<double>() <= r.payload["limit_kw"].get<double>() + 1e-9);
        CHECK(r.payload["site_kw"].get<double>() <= 4.0 + 1e-9);
    }
}

TEST_CASE("engine: plug-in drives the OCPP state machine through Charging and back") {
    Recorder rec;
    Scenario s = scenario_from_toml(std::string(kSmall) + R"(
[[events]]
at = "10m"
type = "plug_in"
vehicle = "ev-2"
charge_point = "cp-2"

[[events]]
at = "2h"
type = "unplug"
vehicle = "ev-2"
)");
    Engine e(s, {}, rec.sink());
    e.run_until(5 * kMsPerMinute);
    CHECK(find_cp(e.chargepoints_json(), "cp-2")["state"] == "Available");
    e.run_until(11 * kMsPerMinute);
    const json cp = find_cp(e.chargepoints_json(), "cp-2");
    CHECK(cp["state"] == "Charging");
    CHECK(cp["connected_vehicle"] == "ev-2");
    CHECK(cp["transaction_id"].is_number());
    e.run_until(s.duration_ms);
    CHECK(find_cp(e.chargepoints_json(), "cp-2")["state"] == "Available");
    std::vector<std::string> events;
    for (const auto& r : rec.of_kind("cp.status")) {
        if (r.payload["status"]["cp_id"] == "cp-2" && !r.payload["event"].is_null()) {
            events.push_back(r.payload["event"]);
        }
    }
    CHECK(events == std::vector<std::string>{"PlugIn", "StartTransaction", "StopTransaction", "Unplug"});
    CHECK(rec.of_kind("warning").empty());
}

TEST_CASE("engine: fault and reset unbind the vehicle") {
    Recorder rec;
    Scenario s = scenario_from_toml(std::string(kSmall) + R"(
[[events]]
at = "20m"
type = "fault"
charge_point = "cp-1"

[[events]]
at = "30m"
type = "reset"
charge_point = "cp-1"
)");
    Engine e(s, {}, rec.sink());
    e.run_until(25 * kMsPerMinute);
    CHECK(find_cp(e.chargepoints_json(), "cp-1")["state"] == "Faulted");
    CHECK(find_cp(e.chargepoints_json(), "cp-1")["applied_kw"] == 0.0);
    e.run_until(40 * kMsPerMinute);
    const json cp = find_cp(e.chargepoints_json(), "cp-1");
    CHECK(cp["state"] == "Available");
    CHECK(cp["connected_vehicle"].is_null());
    CHECK(find_vehicle(e.vehicles_json(), "ev-1")["charge_point"].is_null());
}

TEST_CASE("engine: telemetry reaches the backend quantized") {
    Engine e(scenario_from_toml(kSmall), {});
    e.run_until(2 * kMsPerMinute);
    const json v = find_vehicle(e.vehicles_json(), "ev-2");
    REQUIRE(v["soc"].is_number());
    // en route with no preference yet: soc as sent over the OBD path
    CHECK(v["soc"].get<double>() == doctest::Approx(std::round(0.3 * 255) / 255.0));
    CHECK(v["soc_actual"].get<double>() == doctest::Approx(0.3));
}

// ---- preferences -------------------------------------------------------------------

TEST_CASE("preferences: accepted, replanned, and rejected with the documented codes") {
    Engine e(scenario_from_toml(kSmall), {});
    e.run_until(kMsPerMinute);
    const json ok = e.set_preferences("ev-1", {{"departure_time", "1970-01-01T02:30:00Z"}, {"required_energy_kwh", 8.0}});
    CHECK(ok["vehicle_id"] == "ev-1");
    REQUIRE(ok["plan"].is_object());
    CHECK(ok["plan"]["feasible"] == true);
    CHECK(ok["plan"]["unmet_energy_kwh"].get<double>() == doctest::Approx(0.0));
    CHECK(ok["plan"]["plan_start"].get<TimeMs>() % e.scenario().slot_ms == 0);

    CHECK(code_of([&] { e.set_preferences("ev-9", {{"departure_time", 9000000}}); }) == SvcErrc::UnknownVehicle);
    CHECK(code_of([&] { e.set_preferences("ev-1", {{"departure_time", 0}, {"required_energy_kwh", 1.0}}); }) ==
          SvcErrc::DepartureInPast);
    CHECK(code_of([&] { e.set_preferences("ev-1", {{"departure_time", 9000000}, {"colour", "red"}}); }) ==
          SvcErrc::BadRequest);
    CHECK(code_of([&] { e.set_preferences("ev-1", {{"departure_time", 9000000}, {"required_energy_kwh", 99.0}}); }) ==
          SvcErrc::InvalidPreference);
    CHECK(code_of([&] { e.set_preferences("ev-1", {{"required_energy_kwh", 1.0}}); }) == SvcErrc::BadRequest);
    CHECK(code_of([&] { e.set_preferences("ev-1", json::array()); }) == SvcErrc::BadRequest);
}

TEST_CASE("preferences: an unreachable target is reported as unmet energy, not an error") {
    Engine e(scenario_from_toml(kSmall), {});
    e.run_until(kMsPerMinute);
    // 7 kW for at most ~1 h cannot add 20 kWh
    const json r = e.set_preferences("ev-1", {{"departure_time", 75 * kMsPerMinute}, {"required_energy_kwh", 20.0}});
    REQUIRE(r["plan"].is_object());
    CHECK(r["plan"]["feasible"] == false);
    CHECK(r["plan"]["unmet_energy_kwh"].get<double>() > 10.0);
}

TEST_CASE("preferences: a rejected request leaves no trace in the log") {
    Recorder rec;
    Engine e(scenario_from_toml(kSmall), {}, rec.sink());
    e.run_until(kMsPerMinute);
    const auto before = e.next_seq();
    CHECK_THROWS(e.set_preferences("ev-1", {{"departure_time", 0}}));
    CHECK(e.next_seq() == before);
}

// ---- reservations -----------------------------------------------------------------

TEST_CASE("reservations: lifecycle Active, Fulfilled by plug-in") {
    Recorder rec;
    Scenario s = scenario_from_toml(std::string(kSmall) + R"(
[[events]]
at = "1h"
type = "plug_in"
vehicle = "ev-2"
charge_point = "cp-2"
)");
    Engine e(s, {}, rec.sink());
    e.run_until(kMsPerMinute);
    const json r = e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-2"}, {"window", {{"start", 3600000}, {"end", "1970-01-01T02:00:00Z"}}}});
    CHECK(r["state"] == "Active");
    CHECK(r["reservation_id"] == 1);
    e.run_until(59 * kMsPerMinute + 45 * kMsPerSecond);
    CHECK(find_cp(e.chargepoints_json(), "cp-2")["state"] == "Reserved");
    e.run_until(61 * kMsPerMinute);
    CHECK(e.reservations_json()[0]["state"] == "Fulfilled");
    CHECK(find_cp(e.chargepoints_json(), "cp-2")["state"] == "Charging");
    for (const auto& ack : rec.of_kind("reservation.ack")) {
        CHECK(ack.payload["status"] == "Accepted");
    }
}

TEST_CASE("reservations: conflicts and bad requests") {
    Engine e(scenario_from_toml(kSmall), {});
    e.run_until(kMsPerMinute);
    const json w = json::array({3600000, 7200000});
    e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-2"}, {"window", w}});
    // same charge point, overlapping
    CHECK(code_of([&] {
              e.create_reservation({{"vehicle_id", "ev-1"}, {"cp_id", "cp-2"}, {"window", json::array({5400000, 9000000})}});
          }) == SvcErrc::Conflict);
    // same vehicle on another charge point
    CHECK(code_of([&] { e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-1"}, {"window", w}}); }) ==
          SvcErrc::Conflict);
    // back to back is fine
    CHECK(e.create_reservation({{"vehicle_id", "ev-1"}, {"cp_id", "cp-2"}, {"window", json::array({7200000, 9000000})}})["state"] == "Active");
    CHECK(code_of([&] { e.create_reservation({{"vehicle_id", "ev-9"}, {"cp_id", "cp-2"}, {"window", w}}); }) ==
          SvcErrc::UnknownVehicle);
    CHECK(code_of([&] { e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-9"}, {"window", w}}); }) ==
          SvcErrc::UnknownChargePoint);
    CHECK(code_of([&] {
              e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-2"}, {"window", json::array({7200000, 3600000})}});
          }) == SvcErrc::InvalidWindow);
    CHECK(code_of([&] { e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-2"}}); }) == SvcErrc::BadRequest);
    CHECK(e.reservations_json().size() == 2);
}

TEST_CASE("reservations: an unused hold expires and frees the connector") {
    Recorder rec;
    Engine e(scenario_from_toml(kSmall), {}, rec.sink());
    e.run_until(kMsPerMinute);
    e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-2"}, {"window", json::array({1800000, 3600000})}});
    e.run_until(40 * kMsPerMinute);
    CHECK(find_cp(e.chargepoints_json(), "cp-2")["state"] == "Reserved");
    e.run_until(61 * kMsPerMinute);
    CHECK(e.reservations_json()[0]["state"] == "Expired");
    CHECK(find_cp(e.chargepoints_json(), "cp-2")["state"] == "Available");
    CHECK(rec.of_kind("warning").empty());
}

TEST_CASE("reservations: cancel frees the connector; cancelling twice conflicts") {
    Engine e(scenario_from_toml(kSmall), {});
    e.run_until(kMsPerMinute);
    const json r = e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-2"}, {"window", json::array({0, 3600000})}});
    CHECK(r["state"] == "Active");
    e.run_until(2 * kMsPerMinute);
    CHECK(find_cp(e.chargepoints_json(), "cp-2")["state"] == "Reserved");
    CHECK(e.cancel_reservation(1)["state"] == "Cancelled");
    e.run_until(3 * kMsPerMinute);
    CHECK(find_cp(e.chargepoints_json(), "cp-2")["state"] == "Available");
    CHECK(code_of([&] { e.cancel_reservation(1); }) == SvcErrc::Conflict);
    CHECK(code_of([&] { e.cancel_reservation(77); }) == SvcErrc::UnknownReservation);
}

TEST_CASE("reservations: a reserved, unplugged vehicle is planned before it arrives") {
    Recorder rec;
    Engine e(scenario_from_toml(kSmall), {}, rec.sink());
    e.run_until(kMsPerMinute);
    e.create_reservation({{"vehicle_id", "ev-2"}, {"cp_id", "cp-2"}, {"window", json::array({3600000, 9000000})}});
    e.set_preferences("ev-2", {{"departure_time", 9000000}, {"required_energy_kwh", 6.0}});
    const auto solves = rec.of_kind("solve");
    REQUIRE_FALSE(solves.empty());
    bool found = false;
    for (const auto& v : solves.back().payload["instance"]["vehicles"]) {
        if (v["vehicle_id"] == "ev-2") {
            found = true;
            CHECK(v["plugged"] == false);
        }
    }
    CHECK(found);
    const json plan = find_vehicle(e.vehicles_json(), "ev-2")["plan"];
    REQUIRE(plan.is_object());
    CHECK(plan["forecast_only"] == true);
    CHECK(plan["window"][0].get<int>() > 0);
}

// ---- verification and replay ------------------------------------------------------

TEST_CASE("verify: a clean log passes and replays byte for byte") {
    Recorder rec;
    const Scenario s = load_scenario(kScenarios + "pre_connection.toml");
    Engine e(s, {}, rec.sink());
    e.run_until(s.duration_ms);
    const auto rep = verify_log(rec.lines);
    CHECK(rep.ok());
    CHECK(rep.replay_identical);
    CHECK(rep.solves > 10);
    CHECK(rep.meter_checks > 10);
    CHECK(rep.ocpp_outstanding == 0);
    CHECK(rep.violations.empty());
}

TEST_CASE("verify: tampering is detected") {
    Recorder rec;
    const Scenario s = load_scenario(kScenarios + "two_ev_peak.toml");
    Engine e(s, {}, rec.sink());
    e.run_until(s.duration_ms);
    auto index_of = [&](const std::string& kind) {
        for (std::size_t i = 0; i < rec.records.size(); ++i) {
            if (rec.records[i].kind == kind) {
                return i;
            }
        }
        FAIL("kind not found");
        return std::size_t{0};
    };
    SUBCASE("altered meter register") {
        auto lines = rec.lines;
        const std::size_t i = index_of("meter");
        EventRecord r = rec.records[i];
        r.payload["import_kwh"] = r.payload["import_kwh"].get<double>() + 0.01;
        lines[i] = r.line();
        const auto rep = verify_log(lines);
        CHECK_FALSE(rep.ok());
        CHECK_FALSE(rep.replay_identical);
        CHECK(rep.first_mismatch_seq == r.seq);
    }
    SUBCASE("dropped record") {
        auto lines = rec.lines;
        lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(index_of("profile")));
        CHECK_FALSE(verify_log(lines).ok());
    }
    SUBCASE("infeasible schedule") {
        auto lines = rec.lines;
        const std::size_t i = index_of("solve");
        EventRecord r = rec.records[i];
        auto& power = r.payload["schedule"]["power_kw"];
        for (auto& [vid, series] : power.items()) {
            for (auto& p : series) {
                p = 50.0;
            }
        }
        lines[i] = r.line();
        const auto rep = verify_log(lines);
        bool infeasible = false;
        for (const auto& v : rep.violations) {
            infeasible = infeasible || v.find("schedule infeasible") != std::string::npos;
        }
        CHECK(infeasible);
    }
    SUBCASE("illegal state transition") {
        auto lines = rec.lines;
        const std::size_t i = index_of("cp.status");
        EventRecord r = rec.records[i];
        r.payload["event"] = "StopTransaction";
        lines[i] = r.line();
        CHECK_FALSE(verify_log(lines).ok());
    }
}

namespace {

// Hand-rolled scenario generator: random site, fleet, links and scripted inputs.
std::string random_scenario(std::mt19937_64& rng, int index) {
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    auto real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    std::ostringstream t;
    const int slot_min = std::array{15, 30, 60}[uni(0, 2)];
    t << "schema_version = 1\nname = \"rand" << index << "\"\nseed = " << uni(0, 1 << 20) << "\n"
      << "slot_width_min = " << slot_min << "\nhorizon_slots = " << uni(4, 12) << "\n"
      << "site_limit_kw = [" << uni(4, 20) << ".0, " << uni(4, 20) << ".0]\n"
      << "price = [" << real(0.1, 0.4) << ", " << real(0.1, 0.4) << ", " << real(0.1, 0.4) << "]\n"
      << "peak_step_kw = " << (uni(0, 1) ? "0.5" : "0.0") << "\n"
      << "dispatch_lead = \"" << uni(0, 120) << "s\"\n"
      << "telemetry_interval = \"" << uni(30, 300) << "s\"\n"
      << "meter_interval = \"" << (uni(0, 1) ? 0 : uni(60, 900)) << "s\"\n"
      << "duration = \"3h\"\n\n[links.default]\nlatency_min_ms = " << uni(0, 3) << "\nlatency_max_ms = " << uni(3, 15)
      << "\nseed = " << uni(0, 999) << "\n\n";
    const int ncp = uni(1, 3);
    for (int c = 0; c < ncp; ++c) {
        t << "[[charge_points]]\nid = \"cp-" << c << "\"\nrating_kw = " << std::array{7.4, 11.0, 22.0}[uni(0, 2)]
          << "\nbidirectional = " << (uni(0, 3) ? "true" : "false") << "\n\n";
    }
    const int nev = uni(1, 4);
    std::vector<int> plugged_at(nev, -1);
    std::vector<bool> cp_used(ncp, false);
    for (int v = 0; v < nev; ++v) {
        t << "[[vehicles]]\nid = \"ev-" << v << "\"\nsoc = " << real(0.1, 0.9) << "\ncapacity_kwh = " << uni(30, 80)
          << ".0\nmax_charge_kw = " << uni(3, 11) << ".0\nmax_discharge_kw = " << uni(0, 7) << ".0\n"
          << "charge_efficiency = " << real(0.85, 1.0) << "\ndischarge_efficiency = " << real(0.85, 1.0) << "\n";
        const int c = uni(0, ncp - 1);
        if (!cp_used[c] && uni(0, 1)) {
            cp_used[c] = true;
            plugged_at[v] = c;
            t << "presence = \"plugged_in\"\ncharge_point = \"cp-" << c << "\"\n\n";
        } else {
            t << "presence = \"" << (uni(0, 1) ? "en_route" : "parked") << "\"\n\n";
        }
    }
    // scripted inputs in time order
    struct Ev {
        int at_s;
        std::string body;
    };
    std::vector<Ev> evs;
    for (int v = 0; v < nev; ++v) {
        if (uni(0, 2)) {
            const int at = uni(0, 3600);
            std::ostringstream b;
            b << "type = \"preference\"\nvehicle = \"ev-" << v << "\"\ndeparture = \"" << at + uni(1800, 9000) << "s\"\n";
            if (uni(0, 1)) {
                b << "required_energy_kwh = " << uni(0, 25) << ".0\n";
            } else {
                b << "trip_class = \"" << (uni(0, 1) ? "Short" : "Long") << "\"\n";
            }
            b << "v2g_consent = " << (uni(0, 1) ? "true" : "false") << "\n";
            evs.push_back({at, b.str()});
        }
        if (plugged_at[v] < 0) {
            for (int c = 0; c < ncp; ++c) {
                if (!cp_used[c]) {
                    cp_used[c] = true;
                    const int at = uni(60, 7200);
                    std::ostringstream b;
                    b << "type = \"plug_in\"\nvehicle = \"ev-" << v << "\"\ncharge_point = \"cp-" << c << "\"\n";
                    evs.push_back({at, b.str()});
                    plugged_at[v] = c;
                    break;
                }
            }
        }
    }
    for (int v = 0; v < nev; ++v) {
        if (plugged_at[v] >= 0 && uni(0, 3) == 0) {
            const int at = uni(7300, 10000);
            if (uni(0, 1)) {
                evs.push_back({at, "type = \"unplug\"\nvehicle = \"ev-" + std::to_string(v) + "\"\n"});
            } else {
                evs.push_back({at, "type = \"fault\"\ncharge_point = \"cp-" + std::to_string(plugged_at[v]) + "\"\n"});
                evs.push_back({at + 300, "type = \"reset\"\ncharge_point = \"cp-" + std::to_string(plugged_at[v]) + "\"\n"});
            }
        }
    }
    std::stable_sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) { return a.at_s < b.at_s; });
    for (const auto& e : evs) {
        t << "[[events]]\nat = \"" << e.at_s << "s\"\n" << e.body << "\n";
    }
    return t.str();
}

} // namespace

TEST_CASE("replay: randomized scenarios with API inputs replay identically at every seq") {
    std::mt19937_64 rng(20240611);
    for (int iter = 0; iter < 12; ++iter) {
        const std::string toml = random_scenario(rng, iter);
        CAPTURE(toml);
        const Scenario s = scenario_from_toml(toml);

        std::vector<std::string> lines;
        std::vector<std::size_t> live_state;
        const Engine* live = nullptr;
        Engine e(s, {}, [&](const EventRecord&, const std::string& line) {
            lines.push_back(line);
            live_state.push_back(live ? std::hash<std::string>{}(live->state_json().dump()) : 0);
        });
        live = &e;

        // random API traffic while the clock runs; rejected calls must not log
        auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
        const int nev = static_cast<int>(s.vehicles.size());
        const int ncp = static_cast<int>(s.charge_points.size());
        for (TimeMs t = 0; t < s.duration_ms; t += uni(5, 40) * kMsPerMinute) {
            e.run_until(t);
            const std::string vid = "ev-" + std::to_string(uni(0, nev - 1));
            try {
                switch (uni(0, 2)) {
                case 0:
                    e.set_preferences(vid, {{"departure_time", t + uni(10, 200) * kMsPerMinute},
                                            {"required_energy_kwh", static_cast<double>(uni(0, 20))}});
                    break;
                case 1: {
                    const TimeMs start = t + uni(0, 60) * kMsPerMinute;
                    e.create_reservation({{"vehicle_id", vid},
                                          {"cp_id", "cp-" + std::to_string(uni(0, ncp - 1))},
                                          {"window", json::array({start, start + uni(15, 120) * kMsPerMinute})}});
                    break;
                }
                default:
                    e.cancel_reservation(uni(1, 3));
                }
            } catch (const SvcError&) {
            }
        }
        e.run_until(s.duration_ms);

        std::vector<std::size_t> replay_state;
        const auto again = replay(lines, [&](const EventRecord&, const Engine* eng) {
            replay_state.push_back(eng ? std::hash<std::string>{}(eng->state_json().dump()) : 0);
        });
        REQUIRE(again.size() == lines.size());
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (again[i] != lines[i]) {
                FAIL_CHECK("record " << i + 1 << " differs: " << lines[i] << " vs " << again[i]);
                break;
            }
        }
        CHECK(replay_state == live_state);

        const auto rep = verify_log(lines);
        CHECK_MESSAGE(rep.ok(), rep.to_json().dump());
    }
}

TEST_CASE("replay: the same scenario and seed give byte-identical logs; another seed does not") {
    const Scenario s = load_scenario(kScenarios + "demo.toml");
    Recorder a;
    Recorder b;
    Recorder c;
    run_scenario(s, {}, 6 * kMsPerHour, a.sink());
    run_scenario(s, {}, 6 * kMsPerHour, b.sink());
    run_scenario(s, {.seed = 99}, 6 * kMsPerHour, c.sink());
    CHECK(a.lines == b.lines);
    CHECK(a.lines != c.lines);
}

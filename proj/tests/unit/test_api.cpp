// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <atomic>
#include <filesystem>
#include <thread>

#include "httplib.h"
#include "v2g/service/api.hpp"
#include "v2g/service/replay.hpp"

using namespace v2g;
using namespace v2g::svc;
using nlohmann::json;

namespace {

const std::string kScenarios = std::string(V2G_SOURCE_DIR) + "/scenarios/";

struct Service {
    ControlService svc;
    httplib::Client http;

    explicit Service(ServiceOptions o, const std::string& scenario = "two_ev_peak.toml")
        : svc(with_host(std::move(o))), http("127.0.0.1", boot(svc, scenario)) {
        http.set_read_timeout(10, 0);
    }

    static int boot(ControlService& svc, const std::string& scenario) {
        svc.load(load_scenario(kScenarios + scenario));
        svc.start();
        return svc.port();
    }

    static ServiceOptions with_host(ServiceOptions o) {
        o.host = "127.0.0.1";
        o.port = 0;
        return o;
    }

    json get(const std::string& path, int expect = 200) {
        auto res = http.Get(("/api/v1" + path).c_str());
        REQUIRE(res);
        CHECK(res->status == expect);
        return json::parse(res->body);
    }
    std::pair<int, json> post(const std::string& path, const json& body) {
        auto res = http.Post(("/api/v1" + path).c_str(), body.dump(), "application/json");
        REQUIRE(res);
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }
    std::pair<int, json> del(const std::string& path) {
        auto res = http.Delete(("/api/v1" + path).c_str());
        REQUIRE(res);
        return {res->status, json::parse(res->body)};
    }
};

ServiceOptions manual() {
    ServiceOptions o;
    o.autostart = false;
    return o;
}

/// Reads the stream until `enough` says so (or the timeout hits) and returns the raw text.
std::string read_stream(httplib::Client& http, const httplib::Headers& headers, const std::string& query,
                        const std::function<bool(const std::string&)>& enough) {
    std::string text;
    http.Get(("/api/v1/stream" + query).c_str(), headers, [&](const char* data, std::size_t n) {
        text.append(data, n);
        return !enough(text);
    });
    return text;
}

std::vector<std::uint64_t> ids_in(const std::string& text) {
    std::vector<std::uint64_t> ids;
    std::size_t pos = 0;
    while ((pos = text.find("id: ", pos)) != std::string::npos) {
        if (pos == 0 || text[pos - 1] == '\n') {
            ids.push_back(std::stoull(text.substr(pos + 4)));
        }
        pos += 4;
    }
    return ids;
}

} // namespace

TEST_CASE("api: read endpoints serve the snapshot") {
    Service s(manual());
    const json cps = s.get("/chargepoints");
    REQUIRE(cps.is_array());
    CHECK(cps.size() == 2);
    CHECK(cps[0]["cp_id"] == "cp-a");
    const json vs = s.get("/vehicles");
    CHECK(vs.size() == 2);
    CHECK(vs[0].contains("soc"));
    CHECK(vs[0].contains("plan"));
    CHECK(s.get("/schedule").contains("mode"));
    CHECK(s.get("/metrics")["mode"] == "optimized");
    CHECK(s.get("/reservations").is_array());
    const json st = s.get("/state");
    CHECK(st["scenario"] == "two_ev_peak");
    CHECK(st["running"] == false);
}

TEST_CASE("api: CORS preflight and unknown routes") {
    Service s(manual());
    auto res = s.http.Options("/api/v1/vehicles/ev-a/preferences");
    REQUIRE(res);
    CHECK(res->status == 204);
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
    auto missing = s.http.Get("/api/v1/nothing-here");
    REQUIRE(missing);
    CHECK(missing->status == 404);
}

TEST_CASE("api: scenario step advances the clock deterministically") {
    Service s(manual());
    auto [code, body] = s.post("/scenario/step", {{"until", "1h"}});
    CHECK(code == 200);
    CHECK(body["sim_time_ms"] == kMsPerHour);
    CHECK(s.get("/state")["sim_time_ms"] == kMsPerHour);
    auto [c2, b2] = s.post("/scenario/step", json::object());
    CHECK(c2 == 200);
    CHECK(b2["sim_time_ms"].get<TimeMs>() > kMsPerHour);
    auto [c3, b3] = s.post("/scenario/pause", json::object());
    CHECK(c3 == 200);
    CHECK(b3["running"] == false);
}

TEST_CASE("api: preferences return the plan and map errors to status codes") {
    Service s(manual());
    s.post("/scenario/step", {{"until", "10m"}});
    auto [ok, plan] = s.post("/vehicles/ev-a/preferences",
                             {{"departure_time", "1970-01-01T05:00:00Z"}, {"required_energy_kwh", 8.0}, {"v2g_consent", false}});
    CHECK(ok == 200);
    CHECK(plan["vehicle_id"] == "ev-a");
    CHECK(plan["plan"]["feasible"] == true);
    CHECK(plan["plan"]["power_kw"].is_array());

    auto [past, e1] = s.post("/vehicles/ev-a/preferences", {{"departure_time", 0}, {"required_energy_kwh", 1.0}});
    CHECK(past == 422);
    CHECK(e1["error"] == "DepartureInPast");
    auto [unknown, e2] = s.post("/vehicles/ev-z/preferences", {{"departure_time", 9000000}});
    CHECK(unknown == 404);
    CHECK(e2["error"] == "UnknownVehicle");
    auto [extra, e3] = s.post("/vehicles/ev-a/preferences", {{"departure_time", 9000000}, {"mood", 1}});
    CHECK(extra == 400);
    CHECK(e3["error"] == "BadRequest");
    auto raw = s.http.Post("/api/v1/vehicles/ev-a/preferences", "{oops", "application/json");
    REQUIRE(raw);
    CHECK(raw->status == 400);
    CHECK(json::parse(raw->body)["error"] == "BadRequest");

    // the accepted preference is visible in the next snapshot
    const json vs = s.get("/vehicles");
    CHECK(vs[0]["preference"]["required_energy_kwh"] == 8.0);
}

TEST_CASE("api: reservation create, conflict, cancel") {
    Service s(manual());
    const json body = {{"vehicle_id", "ev-a"}, {"cp_id", "cp-b"}, {"window", {{"start", "1970-01-01T04:00:00Z"}, {"end", "1970-01-01T05:00:00Z"}}}};
    auto [created, r] = s.post("/reservations", body);
    CHECK(created == 201);
    CHECK(r["state"] == "Active");
    const auto id = r["reservation_id"].get<std::int64_t>();
    auto [conflict, e] = s.post("/reservations", body);
    CHECK(conflict == 409);
    CHECK(e["error"] == "Conflict");
    auto [bad_window, e2] = s.post("/reservations", {{"vehicle_id", "ev-b"}, {"cp_id", "cp-a"}, {"window", json::array({7200000, 3600000})}});
    CHECK(bad_window == 422);
    CHECK(e2["error"] == "InvalidWindow");
    auto [unknown_cp, e3] = s.post("/reservations", {{"vehicle_id", "ev-b"}, {"cp_id", "cp-q"}, {"window", json::array({0, 3600000})}});
    CHECK(unknown_cp == 404);
    CHECK(e3["error"] == "UnknownChargePoint");

    auto [cancelled, c] = s.del("/reservations/" + std::to_string(id));
    CHECK(cancelled == 200);
    CHECK(c["state"] == "Cancelled");
    CHECK(s.del("/reservations/" + std::to_string(id)).first == 409);
    CHECK(s.del("/reservations/999").first == 404);
    CHECK(s.get("/reservations")[0]["state"] == "Cancelled");
}

TEST_CASE("api: the stream replays from the start and resumes after Last-Event-ID") {
    Service s(manual());
    s.post("/scenario/step", {{"until", "30m"}});
    const std::uint64_t total = s.get("/state")["next_seq"].get<std::uint64_t>() - 1;
    REQUIRE(total > 20);

    const std::string all = read_stream(s.http, {}, "", [&](const std::string& t) {
        const auto ids = ids_in(t);
        return !ids.empty() && ids.back() >= total;
    });
    CHECK(all.find("event: reset") == std::string::npos);
    CHECK(all.rfind("id: 1\nevent: scenario\ndata: {", 0) == 0);
    const auto ids = ids_in(all);
    REQUIRE(ids.size() >= total);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        CHECK(ids[i] == i + 1);
    }

    const std::string tail = read_stream(s.http, {{"Last-Event-ID", "10"}}, "", [&](const std::string& t) {
        const auto v = ids_in(t);
        return !v.empty() && v.back() >= total;
    });
    CHECK(ids_in(tail).front() == 11);
    const std::string q = read_stream(s.http, {}, "?after=15", [&](const std::string& t) { return !ids_in(t).empty(); });
    CHECK(ids_in(q).front() == 16);

    // live records arrive on an open stream
    std::atomic<bool> got_live{false};
    std::thread reader([&] {
        httplib::Client c("127.0.0.1", s.svc.port());
        c.set_read_timeout(10, 0);
        read_stream(c, {{"Last-Event-ID", std::to_string(total)}}, "", [&](const std::string& t) {
            const auto v = ids_in(t);
            if (!v.empty() && v.front() == total + 1) {
                got_live = true;
            }
            return !v.empty();
        });
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    s.post("/scenario/step", {{"until", "45m"}});
    reader.join();
    CHECK(got_live);
}

TEST_CASE("api: a stale cursor and a scenario reload produce a reset event") {
    Service s(manual());
    s.post("/scenario/step", {{"until", "15m"}});
    const std::string stale = read_stream(s.http, {{"Last-Event-ID", "999999"}}, "", [&](const std::string& t) {
        return !ids_in(t).empty();
    });
    CHECK(stale.rfind("event: reset\n", 0) == 0);
    CHECK(ids_in(stale).front() == 1);

    std::atomic<bool> saw_reset{false};
    std::thread reader([&] {
        httplib::Client c("127.0.0.1", s.svc.port());
        c.set_read_timeout(10, 0);
        const std::uint64_t last = 5;
        read_stream(c, {{"Last-Event-ID", std::to_string(last)}}, "", [&](const std::string& t) {
            if (t.find("event: reset") != std::string::npos && t.find("\"name\":\"pre_connection\"") != std::string::npos) {
                saw_reset = true;
                return true;
            }
            return false;
        });
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    auto res = s.http.Post("/api/v1/scenario/load", json{{"path", kScenarios + "pre_connection.toml"}}.dump(),
                           "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    reader.join();
    CHECK(saw_reset);
    CHECK(s.get("/state")["scenario"] == "pre_connection");

    auto bad = s.http.Post("/api/v1/scenario/load", "schema_version = 9\n", "application/toml");
    REQUIRE(bad);
    CHECK(bad->status == 422);
    CHECK(json::parse(bad->body)["error"] == "ScenarioInvalid");
}

TEST_CASE("api: a paced run advances with the wall clock and its log verifies") {
    const auto dir = std::filesystem::temp_directory_path() / "v2g_api_paced";
    std::filesystem::remove_all(dir);
    ServiceOptions o;
    o.log_dir = dir.string();
    o.speed = 3600.0; // one sim hour per wall second
    {
        Service s(o);
        std::this_thread::sleep_for(std::chrono::milliseconds(600));
        const auto t = s.get("/state")["sim_time_ms"].get<TimeMs>();
        CHECK(t > 10 * kMsPerMinute);
        CHECK(t < 2 * kMsPerHour);
        auto [code, body] = s.post("/vehicles/ev-b/preferences", {{"departure_time", "1970-01-01T04:00:00Z"}, {"required_energy_kwh", 4.0}});
        CHECK(code == 200);
        CHECK(s.svc.wait(std::chrono::milliseconds(8000)) == false); // a serving instance keeps answering
        CHECK(s.get("/state")["sim_time_ms"] == 6 * kMsPerHour);
        s.svc.stop();
    }
    const auto path = dir / "two_ev_peak-7.ndjson";
    REQUIRE(std::filesystem::exists(path));
    const auto rep = verify_log_file(path.string());
    CHECK_MESSAGE(rep.ok(), rep.to_json().dump());
    CHECK(rep.inputs == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("api: a headless service finishes at until") {
    ServiceOptions o;
    o.until = 2 * kMsPerHour;
    ControlService svc(o);
    svc.load(load_scenario(kScenarios + "two_ev_peak.toml"));
    svc.start();
    CHECK(svc.wait(std::chrono::milliseconds(10000)));
    const auto snap = svc.snapshot();
    CHECK(snap->at("sim_time_ms") == 2 * kMsPerHour);
    CHECK(snap->at("running") == false);
    svc.stop();
}

TEST_CASE("api: error codes map to HTTP statuses") {
    CHECK(http_status(SvcErrc::UnknownVehicle) == 404);
    CHECK(http_status(SvcErrc::UnknownChargePoint) == 404);
    CHECK(http_status(SvcErrc::UnknownReservation) == 404);
    CHECK(http_status(SvcErrc::Conflict) == 409);
    CHECK(http_status(SvcErrc::DepartureInPast) == 422);
    CHECK(http_status(SvcErrc::InvalidPreference) == 422);
    CHECK(http_status(SvcErrc::InvalidWindow) == 422);
    CHECK(http_status(SvcErrc::ScenarioInvalid) == 422);
    CHECK(http_status(SvcErrc::BadRequest) == 400);
}

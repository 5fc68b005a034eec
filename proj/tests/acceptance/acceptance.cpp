// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "../support/conformance.hpp"
#include "../support/corpus.hpp"
#include "v2g/bus/tcp.hpp"
#include "v2g/core/realtime.hpp"
#include "v2g/optimizer/solver.hpp"
#include "v2g/oracle/brute_force.hpp"
#include "v2g/service/replay.hpp"
#include "v2g/telemetry/codec.hpp"

using namespace v2g;
using nlohmann::json;

namespace {

const std::string kScenarios = std::string(V2G_SOURCE_DIR) + "/scenarios/";
const std::vector<std::string> kShipped{"two_ev_peak.toml", "pre_connection.toml", "demo.toml"};

struct Outcome {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) {
        ++g_failures;
    }
    char timing[96];
    std::snprintf(timing, sizeof timing, "runtime %.2fs (budget %.0fs%s)", secs, budget_s, in_time ? "" : ", exceeded");
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << o.detail << "; " << timing << std::endl;
}

std::string fmt(double v, int prec = 3) {
    std::ostringstream ss;
    ss.precision(prec);
    ss << std::fixed << v;
    return ss.str();
}

svc::EngineOptions baseline_mode(bool on = true) {
    svc::EngineOptions o;
    o.baseline = on;
    return o;
}

struct Run {
    json metrics;
    std::vector<std::string> lines;
    std::vector<svc::EventRecord> records;
};

Run run_logged(const svc::Scenario& s, svc::EngineOptions opt = {}, std::optional<TimeMs> until = std::nullopt) {
    Run r;
    r.metrics = svc::run_scenario(s, opt, until, [&](const svc::EventRecord& rec, const std::string& line) {
        r.records.push_back(rec);
        r.lines.push_back(line);
    });
    return r;
}

// ---- criteria -------------------------------------------------------------------

Outcome latency() {
    RealTimeScheduler rt;
    bus::Broker broker(rt);
    bus::TcpServerConfig cfg;
    cfg.links["tester"] = bus::LinkProfile::fixed(5);
    bus::TcpBrokerServer server(broker, cfg);
    server.start();

    bus::TcpClient echo(rt, "127.0.0.1", server.port(), "echo");
    echo.subscribe_and_wait(
        "rtt/ping", [&](const bus::BusMessage& m) { echo.publish("rtt/pong", m.payload, bus::Qos::AtMostOnce); },
        bus::Qos::AtMostOnce);
    bus::TcpClient tester(rt, "127.0.0.1", server.port(), "tester");
    std::atomic<int> got{0};
    std::atomic<std::int64_t> arrived_us{0};
    tester.subscribe_and_wait(
        "rtt/pong",
        [&](const bus::BusMessage&) {
            arrived_us = rt.now_us();
            ++got;
        },
        bus::Qos::AtMostOnce);

    constexpr int kTrips = 1000;
    std::vector<std::int64_t> rtts;
    rtts.reserve(kTrips);
    for (int i = 0; i < kTrips; ++i) {
        const int before = got;
        const std::int64_t sent = rt.now_us();
        tester.publish("rtt/ping", std::to_string(i), bus::Qos::AtMostOnce);
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
        while (got == before) {
            if (std::chrono::steady_clock::now() > deadline) {
                return {false, "round trip " + std::to_string(i) + " timed out"};
            }
            std::this_thread::yield();
        }
        rtts.push_back(arrived_us - sent);
    }
    std::sort(rtts.begin(), rtts.end());
    const double p50 = rtts[rtts.size() / 2] / 1000.0;
    const double p99 = rtts[(rtts.size() * 99 + 99) / 100 - 1] / 1000.0;
    const double worst = rtts.back() / 1000.0;
    return {p99 <= 15.0, std::to_string(kTrips) + " round trips over a 5 ms link, p50 " + fmt(p50) + " ms, p99 " +
                             fmt(p99) + " ms (limit 15 ms), max " + fmt(worst) + " ms"};
}

Outcome oracle_equivalence() {
    std::size_t total = 0, equal = 0, bad_schedule = 0;
    corpus::for_each_instance([&](const opt::OptimizationInstance& in) {
        ++total;
        const auto s = opt::solve_schedule(in);
        const auto bf = oracle::brute_force(in, 1.0);
        if (opt::compare_objective(s.objective, bf.schedule.objective) == 0) {
            ++equal;
        }
        if (!opt::verify(in, s).empty() || !opt::verify(in, bf.schedule).empty()) {
            ++bad_schedule;
        }
    });
    return {total > 0 && equal == total && bad_schedule == 0,
            std::to_string(equal) + "/" + std::to_string(total) + " instances match the brute-force optimum (" +
                fmt(total ? 100.0 * static_cast<double>(equal) / static_cast<double>(total) : 0.0, 2) +
                "%), infeasible schedules " + std::to_string(bad_schedule)};
}

Outcome peak_shaving() {
    const auto s = svc::load_scenario(kScenarios + "two_ev_peak.toml");
    const json opt = svc::run_scenario(s, {}, std::nullopt);
    const json base = svc::run_scenario(s, baseline_mode(), std::nullopt);
    const double opt_peak = opt["peak_site_kw"], base_peak = base["peak_site_kw"];
    const double opt_unmet = opt["unmet_energy_kwh"], base_unmet = base["unmet_energy_kwh"];
    const bool ok = base_peak == 10.0 && opt_peak == 4.0 && std::abs(opt_unmet) <= 1e-6 && std::abs(base_unmet) <= 1e-6;
    return {ok, "baseline peak " + fmt(base_peak) + " kW (want 10), optimized peak " + fmt(opt_peak) +
                    " kW (want 4.0 exact), unmet optimized " + fmt(opt_unmet, 9) + " kWh, baseline " +
                    fmt(base_unmet, 9) + " kWh"};
}

Outcome pre_connection() {
    const auto s = svc::load_scenario(kScenarios + "pre_connection.toml");
    const std::string vehicle = "ev-commuter";
    const Run r = run_logged(s);
    std::optional<std::size_t> plug_idx;
    std::string cp_id;
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const auto& rec = r.records[i];
        if (rec.kind == "cp.status" && rec.payload.value("event", json()) == "PlugIn" &&
            rec.payload["status"].value("connected_vehicle", json()) == vehicle) {
            plug_idx = i;
            cp_id = rec.payload["status"]["cp_id"];
            break;
        }
    }
    if (!plug_idx) {
        return {false, "no PlugIn for " + vehicle};
    }
    const TimeMs plug_t = r.records[*plug_idx].sim_time_ms;
    std::size_t early_solves = 0;
    std::optional<TimeMs> first_seen;
    for (std::size_t i = 0; i < *plug_idx; ++i) {
        const auto& rec = r.records[i];
        if (rec.kind != "solve" || rec.sim_time_ms >= plug_t) {
            continue;
        }
        for (const auto& v : rec.payload["instance"]["vehicles"]) {
            if (v["vehicle_id"] == vehicle && v["plugged"] == false) {
                ++early_solves;
                first_seen = first_seen.value_or(rec.sim_time_ms);
            }
        }
    }
    const TimeMs boundary = (plug_t / s.slot_ms + 1) * s.slot_ms;
    std::optional<TimeMs> first_profile;
    for (std::size_t i = *plug_idx + 1; i < r.records.size() && !first_profile; ++i) {
        const auto& rec = r.records[i];
        if (rec.kind == "profile" && rec.payload["phase"] == "sent" && rec.payload["cp_id"] == cp_id) {
            first_profile = rec.sim_time_ms;
        }
    }
    const bool ok = early_solves > 0 && *first_seen < plug_t && first_profile && *first_profile <= boundary;
    return {ok, vehicle + " planned unplugged in " + std::to_string(early_solves) + " solves before PlugIn at " +
                    std::to_string(plug_t) + " ms (first at " + (first_seen ? std::to_string(*first_seen) : "-") +
                    " ms); first profile on " + cp_id + " at " +
                    (first_profile ? std::to_string(*first_profile) : "never") + " ms, next boundary " +
                    std::to_string(boundary) + " ms"};
}

Outcome transitions() {
    const auto r = conformance::enumerate_transition_surface();
    std::string detail = std::to_string(r.pairs) + " state x action pairs (want 126), " +
                         std::to_string(r.mismatches.size()) + " mismatches";
    if (!r.mismatches.empty()) {
        detail += ", first: " + r.mismatches.front();
    }
    return {r.pairs == 7 * 18 && r.mismatches.empty(), detail};
}

Outcome transcript() {
    const auto r = conformance::replay_transcript(std::string(V2G_TEST_DATA_DIR) + "/ocpp_transcript.txt");
    std::string detail = std::to_string(r.frames) + " expected frames replayed, " + std::to_string(r.diffs.size()) + " diffs";
    if (!r.diffs.empty()) {
        detail += ", first: " + r.diffs.front();
    }
    return {r.frames > 0 && r.diffs.empty(), detail};
}

Outcome topics() {
    const auto r = conformance::topic_corpus();
    return {r.cases > 0 && r.mismatches == 0 && r.misclassified == 0,
            std::to_string(r.cases - r.mismatches) + "/" + std::to_string(r.cases) +
                " filter x topic cases agree with the reference matcher; " + std::to_string(r.invalid_filters) +
                " malformed filters, " + std::to_string(r.misclassified) + " accepted"};
}

Outcome codec() {
    using namespace telemetry;
    int cases = 0, bad = 0;
    for (unsigned raw = 0; raw <= 0xFF; ++raw) {
        const auto soc = decode_response(synthesize_response(ReadingKind::SocPercent, raw), 7);
        ++cases;
        bad += soc.kind != ReadingKind::SocPercent || soc.value != soc_from_raw(static_cast<std::uint8_t>(raw)) ||
               soc.timestamp != 7;
        const auto speed = decode_response(synthesize_response(ReadingKind::VehicleSpeedKph, raw), 7);
        ++cases;
        bad += speed.kind != ReadingKind::VehicleSpeedKph || speed.value != static_cast<double>(raw);
    }
    return {bad == 0, std::to_string(cases - bad) + "/" + std::to_string(cases) + " one-byte payloads round-trip"};
}

Outcome determinism() {
    std::string detail;
    bool ok = true;
    for (const auto& name : kShipped) {
        const auto s = svc::load_scenario(kScenarios + name);
        const Run a = run_logged(s);
        const Run b = run_logged(s);
        const bool same = a.lines == b.lines;
        ok = ok && same && !a.lines.empty();
        detail += name + " " + std::to_string(a.lines.size()) + " lines " + (same ? "identical" : "DIFFER") + "; ";
    }

    // one simulated hour through the CLI: run with a log, then verify it
    const auto dir = std::filesystem::temp_directory_path() / ("v2g-acceptance-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    const std::string cli = V2G_CLI;
    const std::string run_cmd = "\"" + cli + "\" run --scenario \"" + kScenarios + "demo.toml\" --until 1h --speed 0 --log-dir \"" +
                                dir.string() + "\" > /dev/null 2>&1";
    if (std::system(run_cmd.c_str()) != 0) {
        return {false, detail + "v2g run failed"};
    }
    std::string log;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        log = entry.path().string();
    }
    const std::string verify_cmd = "\"" + cli + "\" verify --log \"" + log + "\" > \"" + (dir / "report.json").string() + "\"";
    const int rc = std::system(verify_cmd.c_str());
    std::ifstream rin(dir / "report.json");
    const json report = json::parse(rin, nullptr, false);
    std::filesystem::remove_all(dir);
    if (report.is_discarded()) {
        return {false, detail + "v2g verify produced no report"};
    }
    const auto violations = report["violations"].size();
    const bool identical = report["replay_identical"] == true;
    ok = ok && rc == 0 && violations == 0 && identical;
    detail += "v2g verify on a 1 h demo log: " + std::to_string(report["records"].get<std::size_t>()) + " records, " +
              std::to_string(violations) + " violations, replay " + (identical ? "identical" : "DIFFERS");
    return {ok, detail};
}

Outcome energy() {
    std::size_t meter_checks = 0, solves = 0, schedule_violations = 0, log_violations = 0;
    std::string first;
    for (const auto& name : kShipped) {
        for (const bool baseline : {false, true}) {
            const auto s = svc::load_scenario(kScenarios + name);
            const Run r = run_logged(s, baseline_mode(baseline));
            svc::VerifyReport rep;
            svc::check_log(r.records, rep);
            meter_checks += rep.meter_checks;
            log_violations += rep.violations.size();
            if (first.empty() && !rep.violations.empty()) {
                first = rep.violations.front();
            }
            for (const auto& rec : r.records) {
                if (rec.kind != "solve") {
                    continue;
                }
                ++solves;
                const auto in = opt::instance_from_json(rec.payload["instance"]);
                const auto sched = opt::schedule_from_json(rec.payload["schedule"]);
                const auto v = opt::verify(in, sched);
                schedule_violations += v.size();
                if (first.empty() && !v.empty()) {
                    first = v.front();
                }
            }
        }
    }
    const bool ok = meter_checks > 0 && log_violations == 0 && schedule_violations == 0 && solves > 0;
    std::string detail = std::to_string(meter_checks) + " meter readings match integrated power within 1e-6 kWh (" +
                         std::to_string(log_violations) + " log violations); " + std::to_string(solves) +
                         " schedules verified independently, " + std::to_string(schedule_violations) +
                         " SoC/bound violations";
    if (!first.empty()) {
        detail += ", first: " + first;
    }
    return {ok, detail};
}

} // namespace

int main() {
    criterion("latency budget", 60, latency);
    criterion("scheduler oracle equivalence", 300, oracle_equivalence);
    criterion("peak shaving", 10, peak_shaving);
    criterion("pre-connection awareness", 10, pre_connection);
    criterion("protocol: OCPP transition enumeration", 60, transitions);
    criterion("protocol: OCPP golden transcript", 60, transcript);
    criterion("protocol: topic matching corpus", 60, topics);
    criterion("protocol: codec one-byte round trip", 60, codec);
    criterion("determinism and replay", 60, determinism);
    criterion("energy bookkeeping", 60, energy);
    std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << std::endl;
    return g_failures == 0 ? 0 : 1;
}

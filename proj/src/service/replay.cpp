// SPDX-License-Identifier: Apache-2.0
#include "v2g/service/replay.hpp"

#include <cmath>
#include <set>

#include "v2g/ocpp/frame.hpp"
#include "v2g/optimizer/instance.hpp"
#include "v2g/service/model_json.hpp"

namespace v2g::svc {

using nlohmann::json;

namespace {

constexpr double kEnergyTol = 1e-6;

std::string at_seq(const EventRecord& r) { return "seq " + std::to_string(r.seq) + ": "; }

} // namespace

json VerifyReport::to_json() const {
    return {{"ok", ok()},
            {"records", records},
            {"inputs", inputs},
            {"solves", solves},
            {"meter_checks", meter_checks},
            {"ocpp_calls", ocpp_calls},
            {"ocpp_outstanding", ocpp_outstanding},
            {"replay_identical", replay_identical},
            {"first_mismatch_seq", first_mismatch_seq ? json(*first_mismatch_seq) : json(nullptr)},
            {"violations", violations},
            {"kinds", kinds}};
}

std::vector<std::string> replay(const std::vector<std::string>& lines,
                                const std::function<void(const EventRecord&, const Engine*)>& on_record) {
    if (lines.empty()) {
        throw SvcError(SvcErrc::LogInvalid, "empty log");
    }
    const EventRecord first = EventRecord::parse(lines.front());
    if (first.seq != 1 || first.kind != "scenario") {
        throw SvcError(SvcErrc::LogInvalid, "log must start with the scenario record");
    }
    const Scenario scenario = scenario_from_json(first.payload.at("scenario"));
    EngineOptions options;
    options.baseline = first.payload.at("options").at("baseline").get<bool>();
    options.seed = first.payload.at("options").at("seed").get<std::uint64_t>();

    std::vector<std::string> out;
    const Engine* engine_ptr = nullptr;
    Engine engine(scenario, options, [&](const EventRecord& r, const std::string& line) {
        out.push_back(line);
        if (on_record) {
            on_record(r, engine_ptr);
        }
    });
    engine_ptr = &engine;

    TimeMs last = 0;
    for (const auto& line : lines) {
        const EventRecord r = EventRecord::parse(line);
        last = std::max(last, r.sim_time_ms);
        if (!is_input_kind(r.kind)) {
            continue;
        }
        engine.run_until(r.sim_time_ms);
        if (engine.next_seq() != r.seq) {
            // diverged before this input; the line comparison reports where
            break;
        }
        try {
            engine.apply_input(r);
        } catch (const std::exception&) {
            break;
        }
    }
    engine.run_until(last);
    return out;
}

void check_log(const std::vector<EventRecord>& log, VerifyReport& rep) {
    auto fail = [&](const EventRecord& r, const std::string& what) { rep.violations.push_back(at_seq(r) + what); };
    rep.records = log.size();
    if (log.empty()) {
        rep.violations.push_back("empty log");
        return;
    }
    Scenario scenario;
    try {
        scenario = scenario_from_json(log.front().payload.at("scenario"));
    } catch (const std::exception& e) {
        rep.violations.push_back(std::string("scenario record unreadable: ") + e.what());
        return;
    }

    std::map<std::string, ocpp::CpState> cp_state;
    for (const auto& cp : scenario.charge_points) {
        cp_state[cp.id] = ocpp::CpState::Available;
    }
    // outstanding calls by (cp, direction of the call, id)
    std::set<std::tuple<std::string, std::string, std::string>> open_calls;
    struct MeterTrack {
        TimeMs t = 0;
        double p = 0.0;
        double imp = 0.0;
        double exp = 0.0;
    };
    std::map<std::string, MeterTrack> meters;
    struct SocTrack {
        TimeMs t = 0;
        double soc = 0.0;
        double p = 0.0;
    };
    std::map<std::string, SocTrack> socs;
    auto advance = [](MeterTrack& m, TimeMs t) {
        const double e = m.p * ms_to_hours(t - m.t);
        (e >= 0 ? m.imp : m.exp) += std::abs(e);
        m.t = t;
    };
    auto soc_ok = [&](const EventRecord& r, const json& v) {
        if (v.is_number() && (v.get<double>() < 0.0 || v.get<double>() > 1.0)) {
            fail(r, "SoC " + v.dump() + " outside [0,1]");
        }
    };

    std::uint64_t expected = 1;
    TimeMs previous = 0;
    for (const auto& r : log) {
        ++rep.kinds[r.kind];
        if (r.seq != expected) {
            fail(r, "expected seq " + std::to_string(expected));
            expected = r.seq;
        }
        ++expected;
        if (r.sim_time_ms < previous) {
            fail(r, "time goes backwards");
        }
        previous = r.sim_time_ms;
        const json& p = r.payload;
        try {
            if (is_input_kind(r.kind)) {
                ++rep.inputs;
            } else if (r.kind == "solve") {
                ++rep.solves;
                const auto instance = opt::instance_from_json(p.at("instance"));
                const auto schedule = opt::schedule_from_json(p.at("schedule"));
                for (const auto& v : opt::verify(instance, schedule)) {
                    fail(r, "schedule infeasible: " + v);
                }
            } else if (r.kind == "cp.status") {
                const auto st = status_from_json(p.at("status"));
                if (auto bad = ocpp::check_invariants(st)) {
                    fail(r, "status invariant: " + *bad);
                }
                auto it = cp_state.find(st.cp_id);
                if (it == cp_state.end()) {
                    fail(r, "status of unknown charge point " + st.cp_id);
                    continue;
                }
                if (p.at("event").is_null()) {
                    if (st.state != it->second) {
                        fail(r, st.cp_id + " changed state without an event");
                    }
                } else {
                    const std::string name = p["event"].get<std::string>();
                    std::optional<ocpp::CpState> next;
                    for (auto e : ocpp::kAllEvents) {
                        if (ocpp::to_string(e) == name) {
                            next = ocpp::transition(it->second, e);
                        }
                    }
                    if (!next || *next != st.state) {
                        fail(r, st.cp_id + ": " + name + " from " + std::string(ocpp::to_string(it->second)) +
                                    " is not a legal transition to " + std::string(ocpp::to_string(st.state)));
                    }
                }
                it->second = st.state;
            } else if (r.kind == "ocpp") {
                const std::string cp = p.at("cp_id").get<std::string>();
                const std::string dir = p.at("dir").get<std::string>();
                const auto msg = ocpp::parse_frame(p.at("frame").dump());
                if (msg.kind == ocpp::FrameKind::Call) {
                    ++rep.ocpp_calls;
                    if (!open_calls.insert({cp, dir, msg.message_id}).second) {
                        fail(r, "duplicate call id " + msg.message_id);
                    }
                } else {
                    const std::string other = dir == "up" ? "down" : "up";
                    if (open_calls.erase({cp, other, msg.message_id}) == 0) {
                        fail(r, "reply " + msg.message_id + " to no outstanding call");
                    }
                }
            } else if (r.kind == "ev.power") {
                const std::string cp = p.at("cp_id").get<std::string>();
                MeterTrack& m = meters[cp];
                advance(m, r.sim_time_ms);
                m.p = p.at("power_kw").get<double>();
                if (p.contains("soc") && p["vehicle_id"].is_string()) {
                    soc_ok(r, p["soc"]);
                    const std::string vid = p["vehicle_id"].get<std::string>();
                    const auto* spec = scenario.vehicle(vid);
                    const double soc = p["soc"].get<double>();
                    auto it = socs.find(vid);
                    if (spec && it != socs.end()) {
                        const auto& s = spec->state;
                        const double grid = it->second.p * ms_to_hours(r.sim_time_ms - it->second.t);
                        const double battery = grid >= 0 ? grid * s.charge_efficiency : grid / s.discharge_efficiency;
                        const double err = (soc - it->second.soc) * s.capacity_kwh - battery;
                        if (std::abs(err) > kEnergyTol) {
                            fail(r, vid + " stored energy off by " + std::to_string(err) + " kWh");
                        }
                    }
                    socs[vid] = {r.sim_time_ms, soc, m.p};
                }
            } else if (r.kind == "script.drive" || r.kind == "script.reset") {
                // energy leaves the battery outside any meter
                if (p.contains("vehicle")) {
                    socs.erase(p["vehicle"].get<std::string>());
                } else {
                    socs.clear();
                }
            } else if (r.kind == "meter") {
                ++rep.meter_checks;
                const std::string cp = p.at("cp_id").get<std::string>();
                MeterTrack m = meters[cp];
                const TimeMs sampled = p.at("sampled_at_ms").get<TimeMs>();
                if (sampled < m.t) {
                    fail(r, "meter sample predates the last power change");
                }
                advance(m, sampled);
                const double di = p.at("import_kwh").get<double>() - m.imp;
                const double de = p.at("export_kwh").get<double>() - m.exp;
                if (std::abs(di) > kEnergyTol || std::abs(de) > kEnergyTol) {
                    fail(r, cp + " registers differ from integrated power by " + std::to_string(di) + " / " +
                                std::to_string(de) + " kWh");
                }
            } else if (r.kind == "bus.telemetry" || r.kind == "departure") {
                soc_ok(r, p.value("soc", json(nullptr)));
            }
        } catch (const std::exception& e) {
            fail(r, std::string("unreadable payload: ") + e.what());
        }
    }
    rep.ocpp_outstanding = open_calls.size();
}

VerifyReport verify_log(const std::vector<std::string>& lines) {
    VerifyReport rep;
    std::vector<EventRecord> log;
    log.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            log.push_back(EventRecord::parse(lines[i]));
        } catch (const std::exception& e) {
            rep.violations.push_back("line " + std::to_string(i + 1) + ": " + e.what());
            return rep;
        }
    }
    check_log(log, rep);
    try {
        const auto again = replay(lines);
        const std::size_t n = std::min(again.size(), lines.size());
        for (std::size_t i = 0; i < n && !rep.first_mismatch_seq; ++i) {
            if (again[i] != lines[i]) {
                rep.first_mismatch_seq = log[i].seq;
            }
        }
        if (!rep.first_mismatch_seq && again.size() != lines.size()) {
            rep.first_mismatch_seq = n + 1;
        }
        rep.replay_identical = !rep.first_mismatch_seq;
        if (rep.first_mismatch_seq) {
            rep.violations.push_back("replay diverges at seq " + std::to_string(*rep.first_mismatch_seq));
        }
    } catch (const std::exception& e) {
        rep.violations.push_back(std::string("replay failed: ") + e.what());
    }
    return rep;
}

VerifyReport verify_log_file(const std::string& path) { return verify_log(read_lines(path)); }

} // namespace v2g::svc

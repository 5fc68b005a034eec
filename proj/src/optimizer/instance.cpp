// SPDX-License-Identifier: Apache-2.0
#include "v2g/optimizer/instance.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace v2g::opt {

using nlohmann::json;

std::string_view to_string(OptErrc code) {
    switch (code) {
    case OptErrc::InvalidInstance:
        return "InvalidInstance";
    case OptErrc::StalePreference:
        return "StalePreference";
    case OptErrc::InvalidPreference:
        return "InvalidPreference";
    case OptErrc::UnassignedVehicle:
        return "UnassignedVehicle";
    case OptErrc::SolverFailure:
        return "SolverFailure";
    }
    return "?";
}

double VehicleRecord::floor_energy_kwh() const { return std::min(soc_floor, soc) * capacity_kwh; }

const VehicleRecord* OptimizationInstance::find(const std::string& vehicle_id) const {
    for (const auto& v : vehicles) {
        if (v.vehicle_id == vehicle_id) {
            return &v;
        }
    }
    return nullptr;
}

namespace {

[[noreturn]] void invalid(const std::string& what) { throw OptError(OptErrc::InvalidInstance, what); }

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

} // namespace

void validate(const OptimizationInstance& in) {
    if (!(std::isfinite(in.slot_hours) && in.slot_hours > 0)) {
        invalid("slot_hours must be > 0");
    }
    if (in.site_limit_kw.size() != in.price.size()) {
        invalid("site_limit_kw and price must have one entry per slot");
    }
    for (std::size_t t = 0; t < in.price.size(); ++t) {
        if (!finite_nonneg(in.site_limit_kw[t])) {
            invalid("site_limit_kw[" + std::to_string(t) + "] must be >= 0");
        }
        if (!std::isfinite(in.price[t])) {
            invalid("price[" + std::to_string(t) + "] must be finite");
        }
    }
    if (!finite_nonneg(in.peak_step_kw)) {
        invalid("peak_step_kw must be >= 0");
    }
    std::set<std::string> ids;
    for (const auto& v : in.vehicles) {
        const std::string where = "vehicle '" + v.vehicle_id + "': ";
        if (v.vehicle_id.empty() || !ids.insert(v.vehicle_id).second) {
            invalid(where + "ids must be unique and non-empty");
        }
        if (!(std::isfinite(v.soc) && v.soc >= 0 && v.soc <= 1)) {
            invalid(where + "soc must lie in [0, 1]");
        }
        if (!(std::isfinite(v.capacity_kwh) && v.capacity_kwh > 0)) {
            invalid(where + "capacity_kwh must be > 0");
        }
        if (!finite_nonneg(v.max_charge_kw) || !finite_nonneg(v.max_discharge_kw)) {
            invalid(where + "power bounds must be >= 0");
        }
        for (double eta : {v.charge_efficiency, v.discharge_efficiency}) {
            if (!(std::isfinite(eta) && eta > 0 && eta <= 1)) {
                invalid(where + "efficiencies must lie in (0, 1]");
            }
        }
        if (!(std::isfinite(v.soc_floor) && v.soc_floor >= 0 && v.soc_floor <= 1)) {
            invalid(where + "soc_floor must lie in [0, 1]");
        }
        if (!std::isfinite(v.target_energy_kwh)) {
            invalid(where + "target_energy_kwh must be finite");
        }
        if (v.window_start < 0 || v.window_end < v.window_start || v.window_end > in.slots()) {
            invalid(where + "availability window must lie within the horizon");
        }
    }
}

double ObjectiveReport::total_unmet_kwh() const {
    double sum = 0.0;
    for (const auto& [id, u] : unmet_energy_kwh) {
        sum += u;
    }
    return sum;
}

double energy_delta_kwh(const VehicleRecord& v, double p_kw, double hours) {
    return p_kw >= 0 ? p_kw * hours * v.charge_efficiency : p_kw * hours / v.discharge_efficiency;
}

std::vector<double> energy_trajectory(const VehicleRecord& v, const std::vector<double>& power_kw,
                                      double slot_hours) {
    std::vector<double> e{v.initial_energy_kwh()};
    e.reserve(power_kw.size() + 1);
    for (double p : power_kw) {
        e.push_back(e.back() + energy_delta_kwh(v, p, slot_hours));
    }
    return e;
}

ObjectiveReport evaluate(const OptimizationInstance& in, const std::map<std::string, std::vector<double>>& power_kw) {
    ObjectiveReport rep;
    const auto T = static_cast<std::size_t>(in.slots());
    std::vector<double> net(T, 0.0);
    // sum in id order so the report does not depend on how vehicles were listed
    std::vector<const VehicleRecord*> order;
    for (const auto& v : in.vehicles) {
        order.push_back(&v);
    }
    std::sort(order.begin(), order.end(),
              [](const VehicleRecord* a, const VehicleRecord* b) { return a->vehicle_id < b->vehicle_id; });
    for (const VehicleRecord* vp : order) {
        const VehicleRecord& v = *vp;
        const auto it = power_kw.find(v.vehicle_id);
        std::vector<double> p = it == power_kw.end() ? std::vector<double>(T, 0.0) : it->second;
        p.resize(T, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            net[t] += p[t];
        }
        const auto e = energy_trajectory(v, p, in.slot_hours);
        const double added = e[static_cast<std::size_t>(v.window_end)] - e.front();
        rep.unmet_energy_kwh[v.vehicle_id] = std::max(0.0, v.target_energy_kwh - added);
    }
    for (std::size_t t = 0; t < T; ++t) {
        rep.peak_site_kw = std::max(rep.peak_site_kw, net[t]);
        rep.energy_cost += in.price[t] * net[t] * in.slot_hours;
    }
    return rep;
}

std::vector<std::string> verify(const OptimizationInstance& in, const ChargingSchedule& schedule, double tol) {
    std::vector<std::string> out;
    auto fail = [&](const std::string& what) { out.push_back(what); };
    const auto T = static_cast<std::size_t>(in.slots());
    std::vector<double> net(T, 0.0);
    for (const auto& [id, p] : schedule.power_kw) {
        if (!in.find(id)) {
            fail("schedule contains unknown vehicle " + id);
        }
    }
    for (const auto& v : in.vehicles) {
        const auto it = schedule.power_kw.find(v.vehicle_id);
        if (it == schedule.power_kw.end()) {
            fail(v.vehicle_id + ": missing from schedule");
            continue;
        }
        const auto& p = it->second;
        if (p.size() != T) {
            fail(v.vehicle_id + ": expected " + std::to_string(T) + " slots");
            continue;
        }
        for (std::size_t t = 0; t < T; ++t) {
            const bool inside = static_cast<int>(t) >= v.window_start && static_cast<int>(t) < v.window_end;
            const std::string at = v.vehicle_id + " slot " + std::to_string(t) + ": ";
            if (!inside && std::abs(p[t]) > tol) {
                fail(at + "power outside availability window");
            }
            if (p[t] > v.max_charge_kw + tol || p[t] < -v.max_discharge_kw - tol) {
                fail(at + "power outside vehicle bounds");
            }
            net[t] += p[t];
        }
        const auto e = energy_trajectory(v, p, in.slot_hours);
        const double lo = v.floor_energy_kwh();
        for (std::size_t t = 0; t < e.size(); ++t) {
            if (e[t] < lo - tol || e[t] > v.capacity_kwh + tol) {
                fail(v.vehicle_id + " boundary " + std::to_string(t) + ": energy " + std::to_string(e[t]) +
                     " outside [" + std::to_string(lo) + ", " + std::to_string(v.capacity_kwh) + "]");
            }
        }
    }
    for (std::size_t t = 0; t < T; ++t) {
        if (std::abs(net[t]) > in.site_limit_kw[t] + tol) {
            fail("slot " + std::to_string(t) + ": site load " + std::to_string(net[t]) + " exceeds limit");
        }
    }
    const ObjectiveReport recomputed = evaluate(in, schedule.power_kw);
    if (compare_objective(recomputed, schedule.objective, tol) != 0 ||
        recomputed.unmet_energy_kwh.size() != schedule.objective.unmet_energy_kwh.size()) {
        fail("objective report does not match the powers");
    }
    return out;
}

int compare_objective(const ObjectiveReport& a, const ObjectiveReport& b, double tol) {
    const double ka[3] = {a.total_unmet_kwh(), a.peak_site_kw, a.energy_cost};
    const double kb[3] = {b.total_unmet_kwh(), b.peak_site_kw, b.energy_cost};
    for (int i = 0; i < 3; ++i) {
        if (ka[i] < kb[i] - tol) {
            return -1;
        }
        if (ka[i] > kb[i] + tol) {
            return 1;
        }
    }
    return 0;
}

json to_json(const OptimizationInstance& in) {
    json vehicles = json::array();
    for (const auto& v : in.vehicles) {
        vehicles.push_back({{"vehicle_id", v.vehicle_id},
                            {"cp_id", v.cp_id ? json(*v.cp_id) : json(nullptr)},
                            {"soc", v.soc},
                            {"capacity_kwh", v.capacity_kwh},
                            {"max_charge_kw", v.max_charge_kw},
                            {"max_discharge_kw", v.max_discharge_kw},
                            {"charge_efficiency", v.charge_efficiency},
                            {"discharge_efficiency", v.discharge_efficiency},
                            {"window", {v.window_start, v.window_end}},
                            {"target_energy_kwh", v.target_energy_kwh},
                            {"soc_floor", v.soc_floor},
                            {"plugged", v.plugged}});
    }
    return {{"schema_version", 1},
            {"start_ms", in.start_ms},
            {"slot_hours", in.slot_hours},
            {"site_limit_kw", in.site_limit_kw},
            {"price", in.price},
            {"peak_step_kw", in.peak_step_kw},
            {"vehicles", vehicles}};
}

OptimizationInstance instance_from_json(const json& j) {
    try {
        if (j.value("schema_version", 1) != 1) {
            invalid("unsupported schema_version");
        }
        OptimizationInstance in;
        in.start_ms = j.value("start_ms", TimeMs{0});
        in.slot_hours = j.at("slot_hours").get<double>();
        in.price = j.at("price").get<std::vector<double>>();
        const json& limit = j.at("site_limit_kw");
        if (limit.is_number()) {
            in.site_limit_kw.assign(in.price.size(), limit.get<double>());
        } else {
            in.site_limit_kw = limit.get<std::vector<double>>();
        }
        in.peak_step_kw = j.value("peak_step_kw", 0.0);
        for (const auto& jv : j.at("vehicles")) {
            VehicleRecord v;
            v.vehicle_id = jv.at("vehicle_id").get<std::string>();
            if (jv.contains("cp_id") && !jv["cp_id"].is_null()) {
                v.cp_id = jv["cp_id"].get<std::string>();
            }
            v.soc = jv.at("soc").get<double>();
            v.capacity_kwh = jv.at("capacity_kwh").get<double>();
            v.max_charge_kw = jv.at("max_charge_kw").get<double>();
            v.max_discharge_kw = jv.value("max_discharge_kw", 0.0);
            v.charge_efficiency = jv.value("charge_efficiency", 1.0);
            v.discharge_efficiency = jv.value("discharge_efficiency", 1.0);
            const auto w = jv.at("window").get<std::vector<int>>();
            if (w.size() != 2) {
                invalid("window must be [start, end)");
            }
            v.window_start = w[0];
            v.window_end = w[1];
            v.target_energy_kwh = jv.value("target_energy_kwh", 0.0);
            v.soc_floor = jv.value("soc_floor", 0.3);
            v.plugged = jv.value("plugged", false);
            in.vehicles.push_back(std::move(v));
        }
        validate(in);
        return in;
    } catch (const json::exception& e) {
        invalid(std::string("malformed instance: ") + e.what());
    }
}

json to_json(const ObjectiveReport& r) {
    return {{"peak_site_kw", r.peak_site_kw},
            {"energy_cost", r.energy_cost},
            {"unmet_energy_kwh", r.unmet_energy_kwh},
            {"total_unmet_kwh", r.total_unmet_kwh()}};
}

json to_json(const ChargingSchedule& s) {
    return {{"power_kw", s.power_kw}, {"objective", to_json(s.objective)}, {"infeasible_targets", s.infeasible_targets}};
}

ChargingSchedule schedule_from_json(const json& j) {
    ChargingSchedule s;
    s.power_kw = j.at("power_kw").get<std::map<std::string, std::vector<double>>>();
    const json& o = j.at("objective");
    s.objective.peak_site_kw = o.at("peak_site_kw").get<double>();
    s.objective.energy_cost = o.at("energy_cost").get<double>();
    s.objective.unmet_energy_kwh = o.at("unmet_energy_kwh").get<std::map<std::string, double>>();
    s.infeasible_targets = j.value("infeasible_targets", std::vector<std::string>{});
    return s;
}

} // namespace v2g::opt

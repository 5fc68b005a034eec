// SPDX-License-Identifier: Apache-2.0
#include "v2g/optimizer/solver.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "v2g/optimizer/lp.hpp"

namespace v2g::opt {

namespace {

// Rounds away solver dust (and negative zero) on a 1e-9 kW grid, fine enough that
// the energy error over a full horizon stays far below verification tolerance.
double snap(double p) {
    const double r = std::round(p * 1e9) / 1e9;
    return r == 0.0 ? 0.0 : r;
}

struct VehicleColumns {
    std::vector<int> charge;    // per slot, -1 when absent
    std::vector<int> discharge; // per slot, -1 when absent
    int unmet = -1;
};

} // namespace

double max_addable_energy_kwh(const VehicleRecord& v, double slot_hours) {
    const int w = std::max(0, v.window_end - v.window_start);
    return std::min(v.max_charge_kw * v.charge_efficiency * slot_hours * w,
                    v.capacity_kwh - v.initial_energy_kwh());
}

ChargingSchedule solve_schedule(const OptimizationInstance& in, SolveStats* stats) {
    validate(in);
    const int T = in.slots();
    const double dt = in.slot_hours;

    // Vehicle order fixes column order, which fixes tie-breaking.
    std::vector<const VehicleRecord*> order;
    for (const auto& v : in.vehicles) {
        order.push_back(&v);
    }
    std::sort(order.begin(), order.end(),
              [](const VehicleRecord* a, const VehicleRecord* b) { return a->vehicle_id < b->vehicle_id; });

    BoundedSimplex lp;
    std::vector<VehicleColumns> cols(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        const VehicleRecord& v = *order[k];
        cols[k].charge.assign(static_cast<std::size_t>(T), -1);
        cols[k].discharge.assign(static_cast<std::size_t>(T), -1);
        for (int t = v.window_start; t < v.window_end; ++t) {
            if (v.max_charge_kw > 0) {
                cols[k].charge[static_cast<std::size_t>(t)] = lp.add_column(0.0, v.max_charge_kw);
            }
            if (v.max_discharge_kw > 0) {
                cols[k].discharge[static_cast<std::size_t>(t)] = lp.add_column(0.0, v.max_discharge_kw);
            }
        }
        // Unmet energy starts at its largest possible value so that the all-idle
        // point satisfies the target row.
        const double worst = std::max(0.0, v.target_energy_kwh + v.initial_energy_kwh() - v.floor_energy_kwh());
        cols[k].unmet = lp.add_column(0.0, worst, true);
    }
    double max_limit = 0.0;
    for (double l : in.site_limit_kw) {
        max_limit = std::max(max_limit, l);
    }
    const int peak = lp.add_column(0.0, max_limit);

    // site rows
    for (int t = 0; t < T; ++t) {
        BoundedSimplex::Terms net;
        for (const auto& c : cols) {
            if (c.charge[static_cast<std::size_t>(t)] >= 0) {
                net.emplace_back(c.charge[static_cast<std::size_t>(t)], 1.0);
            }
            if (c.discharge[static_cast<std::size_t>(t)] >= 0) {
                net.emplace_back(c.discharge[static_cast<std::size_t>(t)], -1.0);
            }
        }
        if (net.empty()) {
            continue;
        }
        const double limit = in.site_limit_kw[static_cast<std::size_t>(t)];
        lp.add_row(net, -limit, limit);
        net.emplace_back(peak, -1.0);
        lp.add_row(net, -BoundedSimplex::kInf, 0.0);
    }
    // energy rows: every prefix of the window stays within [floor, capacity], and
    // added energy plus unmet covers the target
    BoundedSimplex::Terms unmet_terms;
    BoundedSimplex::Terms cost_terms;
    BoundedSimplex::Terms throughput_terms;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const VehicleRecord& v = *order[k];
        const double e0 = v.initial_energy_kwh();
        BoundedSimplex::Terms added;
        for (int t = v.window_start; t < v.window_end; ++t) {
            const auto s = static_cast<std::size_t>(t);
            const double price = in.price[s] * dt;
            if (cols[k].charge[s] >= 0) {
                added.emplace_back(cols[k].charge[s], v.charge_efficiency * dt);
                cost_terms.emplace_back(cols[k].charge[s], price);
                throughput_terms.emplace_back(cols[k].charge[s], 1.0);
            }
            if (cols[k].discharge[s] >= 0) {
                added.emplace_back(cols[k].discharge[s], -dt / v.discharge_efficiency);
                cost_terms.emplace_back(cols[k].discharge[s], -price);
                throughput_terms.emplace_back(cols[k].discharge[s], 1.0);
            }
            if (!added.empty()) {
                lp.add_row(added, v.floor_energy_kwh() - e0, v.capacity_kwh - e0);
            }
        }
        added.emplace_back(cols[k].unmet, 1.0);
        lp.add_row(added, v.target_energy_kwh, BoundedSimplex::kInf);
        unmet_terms.emplace_back(cols[k].unmet, 1.0);
    }
    auto run = [&](const BoundedSimplex::Terms& objective, const char* stage) {
        lp.set_objective(objective);
        if (lp.minimize() != BoundedSimplex::Status::Optimal) {
            throw OptError(OptErrc::SolverFailure, std::string("LP stage '") + stage + "' did not reach an optimum");
        }
        return lp.objective_value();
    };

    // Each stage ends by restricting the program to its optimal face, so later
    // stages only break ties. No objective row is ever added as a constraint,
    // which keeps vertices integral on integral data.
    // 1. unmet energy
    run(unmet_terms, "unmet");
    lp.restrict_to_optimal_face();
    // 2. peak
    const double p_star = run({{peak, 1.0}}, "peak");
    if (in.peak_step_kw > 0) {
        // Round the peak up to the grid, then pin P there: with P fixed every
        // remaining row is a plain slot or energy-prefix row again.
        const double cap = std::min(max_limit, std::ceil(p_star / in.peak_step_kw - 1e-6) * in.peak_step_kw);
        lp.set_column_bounds(peak, 0.0, std::max(cap, lp.value(peak)));
        run({{peak, -1.0}}, "peak-raise");
        const double at = lp.value(peak);
        lp.set_column_bounds(peak, at, at);
    } else {
        lp.restrict_to_optimal_face();
    }
    // 3. cost
    if (!cost_terms.empty()) {
        run(cost_terms, "cost");
        lp.restrict_to_optimal_face();
        // 4. throughput: no pointless cycling among equally cheap plans
        run(throughput_terms, "throughput");
    }

    ChargingSchedule out;
    for (std::size_t k = 0; k < order.size(); ++k) {
        std::vector<double> p(static_cast<std::size_t>(T), 0.0);
        for (std::size_t s = 0; s < p.size(); ++s) {
            double v = 0.0;
            if (cols[k].charge[s] >= 0) {
                v += lp.value(cols[k].charge[s]);
            }
            if (cols[k].discharge[s] >= 0) {
                v -= lp.value(cols[k].discharge[s]);
            }
            p[s] = snap(v);
        }
        out.power_kw.emplace(order[k]->vehicle_id, std::move(p));
        if (order[k]->target_energy_kwh > max_addable_energy_kwh(*order[k], dt) + 1e-9) {
            out.infeasible_targets.push_back(order[k]->vehicle_id);
        }
    }
    out.objective = evaluate(in, out.power_kw);
    if (stats) {
        stats->columns = lp.columns();
        stats->rows = lp.rows();
        stats->iterations = lp.iterations();
    }
    return out;
}

CosOutput to_charging_profiles(const ChargingSchedule& schedule, const OptimizationInstance& in,
                               std::int64_t first_profile_id) {
    CosOutput out;
    const auto slot_s = static_cast<std::int64_t>(std::llround(in.slot_hours * 3600.0));
    std::vector<const VehicleRecord*> order;
    for (const auto& v : in.vehicles) {
        order.push_back(&v);
    }
    std::sort(order.begin(), order.end(),
              [](const VehicleRecord* a, const VehicleRecord* b) { return a->vehicle_id < b->vehicle_id; });
    std::int64_t next_id = first_profile_id;
    for (const VehicleRecord* v : order) {
        if (!v->plugged) {
            out.forecast_only.push_back(v->vehicle_id);
            continue;
        }
        if (!v->cp_id || v->cp_id->empty()) {
            throw OptError(OptErrc::UnassignedVehicle, "plugged vehicle '" + v->vehicle_id + "' has no charge point");
        }
        const auto it = schedule.power_kw.find(v->vehicle_id);
        std::vector<double> p = it == schedule.power_kw.end() ? std::vector<double>{} : it->second;
        if (p.empty()) {
            p.assign(1, 0.0);
        }
        ocpp::ChargingProfile prof;
        prof.profile_id = next_id++;
        prof.cp_id = *v->cp_id;
        prof.vehicle_id = v->vehicle_id;
        prof.valid_from = in.start_ms;
        prof.valid_to = in.start_ms + static_cast<TimeMs>(p.size()) * slot_s * kMsPerSecond;
        for (std::size_t s = 0; s < p.size(); ++s) {
            if (prof.periods.empty() || prof.periods.back().limit_kw != p[s]) {
                prof.periods.push_back({static_cast<std::int64_t>(s) * slot_s, p[s]});
            }
        }
        out.profiles.push_back(std::move(prof));
    }
    return out;
}

namespace {

// Grid power whose energy effect equals `delta` kWh more than that of `p0`, for
// the piecewise-linear charge/discharge curve. delta may be negative.
double shift_power(const VehicleRecord& v, double p0, double delta, double dt) {
    const double e = energy_delta_kwh(v, p0, dt) + delta;
    const double p = e >= 0 ? e / (v.charge_efficiency * dt) : e * v.discharge_efficiency / dt;
    return p;
}

} // namespace

Flexibility forecast_availability(const OptimizationInstance& in, const ChargingSchedule& schedule) {
    const auto T = static_cast<std::size_t>(in.slots());
    Flexibility f{std::vector<double>(T, 0.0), std::vector<double>(T, 0.0)};
    for (const auto& v : in.vehicles) {
        const auto it = schedule.power_kw.find(v.vehicle_id);
        std::vector<double> p = it == schedule.power_kw.end() ? std::vector<double>(T, 0.0) : it->second;
        p.resize(T, 0.0);
        const auto e = energy_trajectory(v, p, in.slot_hours);
        for (int t = v.window_start; t < v.window_end; ++t) {
            const auto s = static_cast<std::size_t>(t);
            // a deviation in slot s shifts every later boundary by the same energy
            double hi = -1e300;
            double lo = 1e300;
            for (std::size_t b = s + 1; b < e.size(); ++b) {
                hi = std::max(hi, e[b]);
                lo = std::min(lo, e[b]);
            }
            const double room_up = std::max(0.0, v.capacity_kwh - hi);
            const double room_down = std::max(0.0, lo - v.floor_energy_kwh());
            const double up = std::min(v.max_charge_kw, shift_power(v, p[s], room_up, in.slot_hours));
            const double down = std::max(-v.max_discharge_kw, shift_power(v, p[s], -room_down, in.slot_hours));
            f.up_kw[s] += std::max(0.0, up - p[s]);
            f.down_kw[s] += std::max(0.0, p[s] - down);
        }
    }
    return f;
}

Flexibility forecast_availability(const OptimizationInstance& in) {
    return forecast_availability(in, solve_schedule(in));
}

OptimizationInstance advance_one_slot(const OptimizationInstance& in, const ChargingSchedule& schedule) {
    OptimizationInstance next = in;
    if (in.slots() == 0) {
        return next;
    }
    next.start_ms = in.start_ms + static_cast<TimeMs>(std::llround(in.slot_hours * kMsPerHour));
    next.price.erase(next.price.begin());
    next.site_limit_kw.erase(next.site_limit_kw.begin());
    for (auto& v : next.vehicles) {
        const auto it = schedule.power_kw.find(v.vehicle_id);
        const double p0 = it == schedule.power_kw.end() || it->second.empty() ? 0.0 : it->second.front();
        const double delta = energy_delta_kwh(v, p0, in.slot_hours);
        // keep the effective floor the original trajectory was held to
        v.soc_floor = std::min(v.soc_floor, v.soc);
        v.soc = std::clamp((v.initial_energy_kwh() + delta) / v.capacity_kwh, 0.0, 1.0);
        v.target_energy_kwh -= delta;
        v.window_start = std::max(0, v.window_start - 1);
        v.window_end = std::max(0, v.window_end - 1);
    }
    return next;
}

} // namespace v2g::opt

// SPDX-License-Identifier: Apache-2.0
#include "v2g/oracle/brute_force.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

namespace v2g::oracle {

namespace {

constexpr double kTol = 1e-9;

struct Value {
    double unmet = 0;
    double peak = 0;
    double cost = 0; // from this slot on
    std::vector<double> choice; // per vehicle power in this slot
    bool feasible = false;
};

bool better(double u1, double p1, double c1, double u2, double p2, double c2) {
    if (std::abs(u1 - u2) > kTol) {
        return u1 < u2;
    }
    if (std::abs(p1 - p2) > kTol) {
        return p1 < p2;
    }
    return c1 < c2 - kTol;
}

struct Search {
    const opt::OptimizationInstance& in;
    double step;
    std::vector<const opt::VehicleRecord*> veh;
    std::vector<std::vector<double>> options; // power options per vehicle
    std::map<std::tuple<int, std::vector<long long>, long long>, Value> memo;

    static long long key(double x) { return std::llround(x * 1e6); }

    double gain(const opt::VehicleRecord& v, double p) const {
        return p >= 0 ? p * in.slot_hours * v.charge_efficiency : p * in.slot_hours / v.discharge_efficiency;
    }

    Value solve(int t, const std::vector<double>& energy, double peak) {
        std::vector<long long> ek;
        for (double e : energy) {
            ek.push_back(key(e));
        }
        auto mk = std::make_tuple(t, ek, key(peak));
        if (auto it = memo.find(mk); it != memo.end()) {
            return it->second;
        }
        Value best;
        if (t == in.slots()) {
            best.feasible = true;
            best.peak = peak;
            for (std::size_t i = 0; i < veh.size(); ++i) {
                // energy stops changing after the window, so the final value is the window-end value
                best.unmet += std::max(0.0, veh[i]->target_energy_kwh - (energy[i] - veh[i]->soc * veh[i]->capacity_kwh));
            }
            memo.emplace(mk, best);
            return best;
        }
        const double limit = in.site_limit_kw[static_cast<std::size_t>(t)];
        std::vector<double> pick(veh.size(), 0.0);
        std::vector<double> next(energy);
        // odometer over the per-vehicle options of this slot
        std::vector<std::size_t> idx(veh.size(), 0);
        std::vector<std::size_t> count(veh.size(), 1);
        for (std::size_t i = 0; i < veh.size(); ++i) {
            const bool inside = t >= veh[i]->window_start && t < veh[i]->window_end;
            count[i] = inside ? options[i].size() : 1;
        }
        while (true) {
            double net = 0.0;
            bool ok = true;
            for (std::size_t i = 0; i < veh.size() && ok; ++i) {
                const bool inside = t >= veh[i]->window_start && t < veh[i]->window_end;
                pick[i] = inside ? options[i][idx[i]] : 0.0;
                net += pick[i];
                next[i] = energy[i] + gain(*veh[i], pick[i]);
                const double lo = std::min(veh[i]->soc_floor, veh[i]->soc) * veh[i]->capacity_kwh;
                if (next[i] < lo - kTol || next[i] > veh[i]->capacity_kwh + kTol) {
                    ok = false;
                }
            }
            if (ok && std::abs(net) <= limit + kTol) {
                const Value sub = solve(t + 1, next, std::max(peak, net));
                if (sub.feasible) {
                    const double cost = in.price[static_cast<std::size_t>(t)] * net * in.slot_hours + sub.cost;
                    if (!best.feasible || better(sub.unmet, sub.peak, cost, best.unmet, best.peak, best.cost)) {
                        best.feasible = true;
                        best.unmet = sub.unmet;
                        best.peak = sub.peak;
                        best.cost = cost;
                        best.choice = pick;
                    }
                }
            }
            std::size_t k = 0;
            while (k < idx.size() && ++idx[k] == count[k]) {
                idx[k] = 0;
                ++k;
            }
            if (k == idx.size()) {
                break;
            }
        }
        memo.emplace(mk, best);
        return best;
    }
};

} // namespace

OracleResult brute_force(const opt::OptimizationInstance& in, double step_kw) {
    opt::validate(in);
    if (!(step_kw > 0)) {
        throw std::invalid_argument("brute_force: step must be > 0");
    }
    Search s{in, step_kw, {}, {}, {}};
    for (const auto& v : in.vehicles) {
        s.veh.push_back(&v);
    }
    std::sort(s.veh.begin(), s.veh.end(), [](auto* a, auto* b) { return a->vehicle_id < b->vehicle_id; });
    for (const auto* v : s.veh) {
        std::vector<double> opts;
        const auto lo = static_cast<long long>(std::ceil(-v->max_discharge_kw / step_kw - kTol));
        const auto hi = static_cast<long long>(std::floor(v->max_charge_kw / step_kw + kTol));
        for (long long k = lo; k <= hi; ++k) {
            opts.push_back(static_cast<double>(k) * step_kw);
        }
        s.options.push_back(std::move(opts));
    }
    std::vector<double> energy;
    for (const auto* v : s.veh) {
        energy.push_back(v->soc * v->capacity_kwh);
    }
    // Walk the memo along the optimal choices to recover the schedule.
    OracleResult out;
    const auto T = static_cast<std::size_t>(in.slots());
    for (const auto* v : s.veh) {
        out.schedule.power_kw[v->vehicle_id].assign(T, 0.0);
    }
    const Value root = s.solve(0, energy, 0.0);
    if (!root.feasible) {
        throw std::logic_error("brute_force: idle schedule must be feasible");
    }
    double peak = 0.0;
    for (int t = 0; t < in.slots(); ++t) {
        const Value v = s.solve(t, energy, peak);
        double net = 0.0;
        for (std::size_t i = 0; i < s.veh.size(); ++i) {
            out.schedule.power_kw[s.veh[i]->vehicle_id][static_cast<std::size_t>(t)] = v.choice[i];
            energy[i] += s.gain(*s.veh[i], v.choice[i]);
            net += v.choice[i];
        }
        peak = std::max(peak, net);
    }
    out.schedule.objective.peak_site_kw = root.peak;
    out.schedule.objective.energy_cost = root.cost;
    for (std::size_t i = 0; i < s.veh.size(); ++i) {
        const auto* v = s.veh[i];
        out.schedule.objective.unmet_energy_kwh[v->vehicle_id] =
            std::max(0.0, v->target_energy_kwh - (energy[i] - v->soc * v->capacity_kwh));
    }
    out.states = s.memo.size();
    return out;
}

} // namespace v2g::oracle

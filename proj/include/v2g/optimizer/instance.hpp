// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "v2g/core/error.hpp"
#include "v2g/core/time.hpp"

namespace v2g::opt {

enum class OptErrc { InvalidInstance, StalePreference, InvalidPreference, UnassignedVehicle, SolverFailure };
using OptError = Error<OptErrc>;

std::string_view to_string(OptErrc code);

/// One vehicle as seen by the scheduler. Energies are battery-side kWh, powers
/// grid-side kW (positive charges).
struct VehicleRecord {
    std::string vehicle_id;
    std::optional<std::string> cp_id;
    double soc = 0.5;
    double capacity_kwh = 40.0;
    double max_charge_kw = 7.0;
    double max_discharge_kw = 0.0;
    double charge_efficiency = 1.0;
    double discharge_efficiency = 1.0;
    /// Slots [window_start, window_end) in which the vehicle can draw or feed power.
    int window_start = 0;
    int window_end = 0;
    /// Net battery energy to add by window_end. Negative values allow a V2G
    /// give-back of that much without counting as unmet.
    double target_energy_kwh = 0.0;
    double soc_floor = 0.3;
    bool plugged = false;

    double initial_energy_kwh() const { return soc * capacity_kwh; }
    /// The floor applies from min(soc_floor, soc): a vehicle that starts below
    /// its floor may not go lower but is not infeasible.
    double floor_energy_kwh() const;

    friend bool operator==(const VehicleRecord&, const VehicleRecord&) = default;
};

struct OptimizationInstance {
    TimeMs start_ms = 0;
    double slot_hours = 0.25;
    std::vector<double> site_limit_kw; // per slot
    std::vector<double> price;         // per slot, signed currency/kWh
    /// When positive, the site peak is chosen on this grid (kW).
    double peak_step_kw = 0.0;
    std::vector<VehicleRecord> vehicles;

    int slots() const { return static_cast<int>(price.size()); }
    const VehicleRecord* find(const std::string& vehicle_id) const;

    friend bool operator==(const OptimizationInstance&, const OptimizationInstance&) = default;
};

/// Throws OptError(InvalidInstance) naming the first offending field.
void validate(const OptimizationInstance& instance);

struct ObjectiveReport {
    double peak_site_kw = 0.0;
    double energy_cost = 0.0;
    std::map<std::string, double> unmet_energy_kwh;

    double total_unmet_kwh() const;
    friend bool operator==(const ObjectiveReport&, const ObjectiveReport&) = default;
};

struct ChargingSchedule {
    /// Keyed by vehicle id; one signed kW value per slot.
    std::map<std::string, std::vector<double>> power_kw;
    ObjectiveReport objective;
    /// Vehicles whose target cannot be met even alone on the site.
    std::vector<std::string> infeasible_targets;

    friend bool operator==(const ChargingSchedule&, const ChargingSchedule&) = default;
};

/// Battery energy change for grid power `p_kw` held for `hours`.
double energy_delta_kwh(const VehicleRecord& v, double p_kw, double hours);

/// Stored energy at every slot boundary (slots + 1 values).
std::vector<double> energy_trajectory(const VehicleRecord& v, const std::vector<double>& power_kw,
                                      double slot_hours);

/// Objective (unmet, peak, cost) of arbitrary powers. peak = max(0, max net site load).
ObjectiveReport evaluate(const OptimizationInstance& instance, const std::map<std::string, std::vector<double>>& power_kw);

/// Independent feasibility check. Empty when every constraint holds within `tol`.
std::vector<std::string> verify(const OptimizationInstance& instance, const ChargingSchedule& schedule,
                                double tol = 1e-6);

/// Lexicographic comparison of (total unmet, peak, cost) with an absolute tolerance.
/// Returns -1, 0 or 1.
int compare_objective(const ObjectiveReport& a, const ObjectiveReport& b, double tol = 1e-6);

nlohmann::json to_json(const OptimizationInstance& instance);
OptimizationInstance instance_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ObjectiveReport& report);
nlohmann::json to_json(const ChargingSchedule& schedule);
ChargingSchedule schedule_from_json(const nlohmann::json& j);

} // namespace v2g::opt

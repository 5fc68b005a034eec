// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "v2g/ocpp/charge_point.hpp"
#include "v2g/optimizer/instance.hpp"

namespace v2g::opt {

struct SolveStats {
    std::size_t columns = 0;
    std::size_t rows = 0;
    std::size_t iterations = 0;
};

/// Lexicographically minimizes (total unmet energy, site peak, energy cost), then
/// total throughput as a final tie-break. Exact up to floating point; powers are
/// rounded to 1e-6 kW. Deterministic for a given instance.
ChargingSchedule solve_schedule(const OptimizationInstance& instance, SolveStats* stats = nullptr);

/// Largest net energy a vehicle can add within its window alone on the site.
double max_addable_energy_kwh(const VehicleRecord& v, double slot_hours);

struct CosOutput {
    std::vector<ocpp::ChargingProfile> profiles;
    /// Unplugged vehicles: planned, but no command is issued.
    std::vector<std::string> forecast_only;
};

/// One profile per plugged vehicle, equal consecutive slots merged, offsets in
/// seconds from the instance start. Throws OptError(UnassignedVehicle).
CosOutput to_charging_profiles(const ChargingSchedule& schedule, const OptimizationInstance& instance,
                               std::int64_t first_profile_id = 1);

struct Flexibility {
    std::vector<double> up_kw;   // extra consumption the fleet could absorb per slot
    std::vector<double> down_kw; // consumption the fleet could shed (incl. discharge) per slot
};

/// Single-slot deviation headroom around the schedule, per slot, summed over
/// vehicles available in that slot. Respects power bounds, capacity and the
/// soc floor along the rest of the planned trajectory; ignores the site limit.
Flexibility forecast_availability(const OptimizationInstance& instance, const ChargingSchedule& schedule);
Flexibility forecast_availability(const OptimizationInstance& instance);

/// Receding-horizon step: applies slot 0 of `schedule`, drops it from the
/// horizon and shifts windows and targets accordingly.
OptimizationInstance advance_one_slot(const OptimizationInstance& instance, const ChargingSchedule& schedule);

} // namespace v2g::opt

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "v2g/optimizer/instance.hpp"

namespace v2g::oracle {

struct OracleResult {
    opt::ChargingSchedule schedule; // one optimal grid schedule
    std::size_t states = 0;         // memoized search states visited
};

/// Exhaustive search over per-vehicle per-slot powers that are integer multiples
/// of `step_kw`, memoized on (slot, stored energies, running peak). Returns the
/// lexicographic optimum of (total unmet, peak, cost) over that grid.
///
/// Shares only the data types with the optimizer: feasibility and the objective
/// are recomputed here from first principles.
OracleResult brute_force(const opt::OptimizationInstance& instance, double step_kw = 1.0);

} // namespace v2g::oracle

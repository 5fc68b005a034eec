// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace v2g::opt {

/// Dense primal simplex over box-bounded columns and ranged rows:
///     minimize  c.x   subject to  lo_r <= a_r.x <= hi_r,  lb_j <= x_j <= ub_j.
///
/// There is no phase 1. Every column starts at one of its (finite) bounds and the
/// resulting row activities must already lie in their ranges. Bounds and the
/// objective may be changed between solves as long as the current point stays
/// feasible, which is how lexicographic stages are chained with a warm start.
class BoundedSimplex {
public:
    static constexpr double kInf = std::numeric_limits<double>::infinity();
    using Terms = std::vector<std::pair<int, double>>;

    enum class Status { Optimal, Unbounded, IterationLimit };

    int add_column(double lb, double ub, bool start_at_upper = false);
    int add_row(const Terms& terms, double lo, double hi);

    void set_objective(const Terms& terms);
    void set_row_bounds(int row, double lo, double hi);
    void set_column_bounds(int col, double lb, double ub);

    Status minimize(std::size_t max_iterations = 200000);

    /// After an optimal solve: pins every nonbasic variable with a nonzero reduced
    /// cost (structural or row slack) at its current value. The feasible set becomes
    /// exactly the optimal face, so a following stage cannot trade this objective away.
    void restrict_to_optimal_face();

    double value(int col) const { return x_[static_cast<std::size_t>(col)]; }
    double row_value(int row) const { return x_[static_cast<std::size_t>(n_ + row)]; }
    double objective_value() const;
    std::size_t iterations() const { return iterations_; }
    std::size_t columns() const { return n_; }
    std::size_t rows() const { return rows_.size(); }

private:
    void build();
    void recompute_basics();
    void recompute_reduced_costs();
    double& at(std::size_t r, std::size_t j) { return tab_[r * width_ + j]; }
    double at(std::size_t r, std::size_t j) const { return tab_[r * width_ + j]; }

    std::size_t n_ = 0; // structural columns
    std::vector<Terms> rows_;
    std::vector<double> row_lo_, row_hi_;
    // Column bounds; after build() they also cover the row slacks (index n_ + r).
    std::vector<double> lb_, ub_, x_, cost_;
    std::vector<bool> start_upper_;

    bool built_ = false;
    std::size_t width_ = 0; // n_ + rows
    std::vector<double> tab_;
    std::vector<std::size_t> basis_;
    std::vector<long> pos_; // row of a basic variable, -1 if nonbasic
    std::vector<double> d_;
    std::vector<std::size_t> nz_;
    std::size_t iterations_ = 0;
};

} // namespace v2g::opt

// SPDX-License-Identifier: Apache-2.0
#include "v2g/optimizer/lp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace v2g::opt {

namespace {
constexpr double kFeasTol = 1e-9;
constexpr double kOptTol = 1e-9;
constexpr double kPivotTol = 1e-10;
// Switch from Dantzig pricing to Bland's rule after this many degenerate pivots.
constexpr std::size_t kDegenerateStreak = 50;
} // namespace

int BoundedSimplex::add_column(double lb, double ub, bool start_at_upper) {
    if (built_) {
        throw std::logic_error("BoundedSimplex: columns must be added before the first solve");
    }
    if (!std::isfinite(lb) || (start_at_upper && !std::isfinite(ub)) || lb > ub) {
        throw std::invalid_argument("BoundedSimplex: column needs a finite starting bound");
    }
    lb_.push_back(lb);
    ub_.push_back(ub);
    start_upper_.push_back(start_at_upper);
    cost_.push_back(0.0);
    return static_cast<int>(n_++);
}

int BoundedSimplex::add_row(const Terms& terms, double lo, double hi) {
    if (built_) {
        throw std::logic_error("BoundedSimplex: rows must be added before the first solve");
    }
    for (const auto& [col, coef] : terms) {
        if (col < 0 || static_cast<std::size_t>(col) >= n_ || !std::isfinite(coef)) {
            throw std::invalid_argument("BoundedSimplex: bad row term");
        }
    }
    if (lo > hi) {
        throw std::invalid_argument("BoundedSimplex: empty row range");
    }
    rows_.push_back(terms);
    row_lo_.push_back(lo);
    row_hi_.push_back(hi);
    return static_cast<int>(rows_.size() - 1);
}

void BoundedSimplex::set_objective(const Terms& terms) {
    std::fill(cost_.begin(), cost_.end(), 0.0);
    for (const auto& [col, coef] : terms) {
        cost_.at(static_cast<std::size_t>(col)) += coef;
    }
    if (built_) {
        recompute_reduced_costs();
    }
}

void BoundedSimplex::set_row_bounds(int row, double lo, double hi) {
    if (!built_) {
        row_lo_.at(static_cast<std::size_t>(row)) = lo;
        row_hi_.at(static_cast<std::size_t>(row)) = hi;
        return;
    }
    set_column_bounds(static_cast<int>(n_) + row, lo, hi);
}

void BoundedSimplex::set_column_bounds(int col, double lb, double ub) {
    const auto j = static_cast<std::size_t>(col);
    if (!built_) {
        lb_.at(j) = lb;
        ub_.at(j) = ub;
        return;
    }
    lb_.at(j) = lb;
    ub_.at(j) = ub;
    if (pos_[j] < 0) {
        // nonbasic: keep it on a bound
        if (x_[j] < lb || (std::isfinite(lb) && !std::isfinite(ub))) {
            x_[j] = std::isfinite(lb) ? lb : 0.0;
        }
        if (x_[j] > ub) {
            x_[j] = ub;
        }
        recompute_basics();
    }
}

void BoundedSimplex::restrict_to_optimal_face() {
    for (std::size_t j = 0; j < width_; ++j) {
        if (pos_[j] < 0 && std::abs(d_[j]) > kOptTol) {
            lb_[j] = x_[j];
            ub_[j] = x_[j];
        }
    }
}

void BoundedSimplex::build() {
    const std::size_t m = rows_.size();
    width_ = n_ + m;
    for (std::size_t r = 0; r < m; ++r) {
        lb_.push_back(row_lo_[r]);
        ub_.push_back(row_hi_[r]);
        cost_.push_back(0.0);
    }
    x_.assign(width_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
        x_[j] = start_upper_[j] ? ub_[j] : lb_[j];
    }
    // Rows read a.x - s = 0 with every slack basic, so B = -I and the tableau
    // B^-1 [A | -I] is [-A | I].
    tab_.assign(m * width_, 0.0);
    basis_.resize(m);
    pos_.assign(width_, -1);
    for (std::size_t r = 0; r < m; ++r) {
        for (const auto& [col, coef] : rows_[r]) {
            at(r, static_cast<std::size_t>(col)) -= coef;
        }
        at(r, n_ + r) = 1.0;
        basis_[r] = n_ + r;
        pos_[n_ + r] = static_cast<long>(r);
    }
    built_ = true;
    recompute_basics();
    for (std::size_t r = 0; r < m; ++r) {
        const double v = x_[n_ + r];
        if (v < lb_[n_ + r] - 1e-7 || v > ub_[n_ + r] + 1e-7) {
            throw std::invalid_argument("BoundedSimplex: starting point violates row " + std::to_string(r));
        }
    }
    recompute_reduced_costs();
}

void BoundedSimplex::recompute_basics() {
    // x_B = -sum over nonbasic j of T[:, j] x_j
    for (std::size_t r = 0; r < basis_.size(); ++r) {
        double v = 0.0;
        const double* row = &tab_[r * width_];
        for (std::size_t j = 0; j < width_; ++j) {
            if (pos_[j] < 0 && x_[j] != 0.0) {
                v -= row[j] * x_[j];
            }
        }
        x_[basis_[r]] = v;
    }
}

void BoundedSimplex::recompute_reduced_costs() {
    d_ = cost_;
    for (std::size_t r = 0; r < basis_.size(); ++r) {
        const double cb = cost_[basis_[r]];
        if (cb == 0.0) {
            continue;
        }
        const double* row = &tab_[r * width_];
        for (std::size_t j = 0; j < width_; ++j) {
            d_[j] -= cb * row[j];
        }
    }
}

double BoundedSimplex::objective_value() const {
    double z = 0.0;
    for (std::size_t j = 0; j < cost_.size() && j < x_.size(); ++j) {
        z += cost_[j] * x_[j];
    }
    return z;
}

BoundedSimplex::Status BoundedSimplex::minimize(std::size_t max_iterations) {
    if (!built_) {
        build();
    } else {
        recompute_basics();
    }
    const std::size_t m = basis_.size();
    std::size_t degenerate = 0;
    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        const bool bland = degenerate >= kDegenerateStreak;
        // pricing
        std::size_t enter = width_;
        double best = 0.0;
        int dir = 0;
        for (std::size_t j = 0; j < width_; ++j) {
            if (pos_[j] >= 0) {
                continue;
            }
            const double dj = d_[j];
            int dj_dir = 0;
            if (dj < -kOptTol && x_[j] < ub_[j] - kFeasTol) {
                dj_dir = 1;
            } else if (dj > kOptTol && x_[j] > lb_[j] + kFeasTol) {
                dj_dir = -1;
            }
            if (dj_dir == 0) {
                continue;
            }
            if (bland) {
                enter = j;
                dir = dj_dir;
                break;
            }
            if (std::abs(dj) > best) {
                best = std::abs(dj);
                enter = j;
                dir = dj_dir;
            }
        }
        if (enter == width_) {
            return Status::Optimal;
        }
        ++iterations_;

        // ratio test: basic b moves by rate * theta with rate = -dir * T[r][enter]
        double theta = ub_[enter] - lb_[enter]; // bound flip
        long leave_row = -1;
        double leave_pivot = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            const double t = at(r, enter);
            if (std::abs(t) <= kPivotTol) {
                continue;
            }
            const double rate = -dir * t;
            const std::size_t b = basis_[r];
            double limit = kInf;
            if (rate < 0 && std::isfinite(lb_[b])) {
                limit = (x_[b] - lb_[b]) / -rate;
            } else if (rate > 0 && std::isfinite(ub_[b])) {
                limit = (ub_[b] - x_[b]) / rate;
            }
            if (!std::isfinite(limit)) {
                continue;
            }
            limit = std::max(limit, 0.0);
            bool take = false;
            if (limit < theta - 1e-12) {
                take = true;
            } else if (limit <= theta + 1e-12 && leave_row >= 0) {
                take = bland ? b < basis_[static_cast<std::size_t>(leave_row)] : std::abs(t) > std::abs(leave_pivot);
            }
            if (take) {
                theta = limit;
                leave_row = static_cast<long>(r);
                leave_pivot = t;
            }
        }
        if (!std::isfinite(theta)) {
            return Status::Unbounded;
        }
        degenerate = theta < 1e-12 ? degenerate + 1 : 0;

        // move along the edge
        if (theta > 0) {
            x_[enter] += dir * theta;
            for (std::size_t r = 0; r < m; ++r) {
                const double t = at(r, enter);
                if (t != 0.0) {
                    x_[basis_[r]] -= dir * t * theta;
                }
            }
        }
        if (leave_row < 0) {
            // entering variable went to its opposite bound
            x_[enter] = dir > 0 ? ub_[enter] : lb_[enter];
            continue;
        }
        const auto r = static_cast<std::size_t>(leave_row);
        const std::size_t leaving = basis_[r];
        // snap the leaving variable onto the bound it reached
        const double rate = -dir * leave_pivot;
        x_[leaving] = rate < 0 ? lb_[leaving] : ub_[leaving];

        // pivot on (r, enter); rows are touched only where the pivot row is nonzero
        double* prow = &tab_[r * width_];
        const double inv = 1.0 / prow[enter];
        nz_.clear();
        for (std::size_t j = 0; j < width_; ++j) {
            if (prow[j] != 0.0) {
                prow[j] *= inv;
                nz_.push_back(j);
            }
        }
        prow[enter] = 1.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (i == r) {
                continue;
            }
            double* row = &tab_[i * width_];
            const double f = row[enter];
            if (f == 0.0) {
                continue;
            }
            for (const std::size_t j : nz_) {
                row[j] -= f * prow[j];
            }
            row[enter] = 0.0;
        }
        const double f = d_[enter];
        for (const std::size_t j : nz_) {
            d_[j] -= f * prow[j];
        }
        d_[enter] = 0.0;
        pos_[leaving] = -1;
        pos_[enter] = static_cast<long>(r);
        basis_[r] = enter;
    }
    return Status::IterationLimit;
}

} // namespace v2g::opt

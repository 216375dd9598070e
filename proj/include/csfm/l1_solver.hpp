#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "csfm/errors.hpp"

namespace csfm {

struct Triplet {
    int row = 0;
    int col = 0;
    double value = 0.0;
};

/// Overdetermined (or square) sparse system A x = b in triplet form.
struct SparseLinearSystem {
    int rows = 0;
    int cols = 0;
    std::vector<Triplet> entries;
    Eigen::VectorXd rhs;

    void validate() const {
        if (cols <= 0) throw ValidationError("sparse system has no unknowns");
        if (rows < cols)
            throw ValidationError("sparse system is underdetermined (" + std::to_string(rows) + " rows, " +
                                  std::to_string(cols) + " cols)");
        if (rhs.size() != rows) throw ValidationError("right-hand side length does not match row count");
        std::set<std::pair<int, int>> seen;
        for (const Triplet& t : entries) {
            if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
                throw ValidationError("triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                                      ") out of range");
            if (!seen.emplace(t.row, t.col).second)
                throw ValidationError("duplicate triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                                      ")");
        }
    }

    Eigen::SparseMatrix<double> matrix() const {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(entries.size());
        for (const Triplet& t : entries) trips.emplace_back(t.row, t.col, t.value);
        Eigen::SparseMatrix<double> a(rows, cols);
        a.setFromTriplets(trips.begin(), trips.end());
        return a;
    }
};

/// Weighted least squares over a fixed sparsity pattern, solved through the
/// normal equations A^T W A x = A^T W b with a sparse LDL^T factorization.
/// The symbolic analysis is done once and reused across weight updates.
class WeightedLeastSquares {
public:
    explicit WeightedLeastSquares(const SparseLinearSystem& sys) : a_(sys.matrix()), b_(sys.rhs) {
        sys.validate();
        at_ = a_.transpose();
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& weights) {
        if (weights.size() != a_.rows()) throw ValidationError("weight vector length does not match row count");
        for (Eigen::Index k = 0; k < weights.size(); ++k)
            if (!(weights[k] > 0.0) || !std::isfinite(weights[k]))
                throw ValidationError("weights must be positive and finite");
        const Eigen::SparseMatrix<double> normal = at_ * weights.asDiagonal() * a_;
        if (!analyzed_) {
            ldlt_.analyzePattern(normal);
            analyzed_ = true;
        }
        ldlt_.factorize(normal);
        if (ldlt_.info() != Eigen::Success) throw NumericError("weighted normal equations are singular");
        const Eigen::VectorXd d = ldlt_.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        if (!(d.minCoeff() > 1e-13 * dmax))
            throw NumericError("weighted normal equations are rank deficient (missing gauge fixing or "
                               "disconnected measurement graph)");
        Eigen::VectorXd x = ldlt_.solve(at_ * weights.cwiseProduct(b_));
        if (ldlt_.info() != Eigen::Success || !x.allFinite()) throw NumericError("weighted least-squares solve failed");
        return x;
    }

    Eigen::VectorXd residual(const Eigen::VectorXd& x) const { return a_ * x - b_; }

private:
    Eigen::SparseMatrix<double> a_;
    Eigen::SparseMatrix<double> at_;
    Eigen::VectorXd b_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
    bool analyzed_ = false;
};

inline Eigen::VectorXd solve_weighted_ls(const SparseLinearSystem& sys, const Eigen::VectorXd& weights) {
    WeightedLeastSquares wls(sys);
    return wls.solve(weights);
}

struct L1Options {
    double epsilon = 1e-5;
    int max_iterations = 100;
    double tolerance = 1e-10;
};

struct L1Solution {
    Eigen::VectorXd x;
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective;  // ||A x - b||_1 for the start point and after every iteration
};

using L1Observer = std::function<void(int iteration, const Eigen::VectorXd& residual)>;

/// L1 regression by iteratively reweighted least squares: starts at the
/// ordinary least-squares solution and reweights rows by 1 / max(|r_k|, eps).
/// The eps floor makes each step minimize a smoothed objective, which can
/// raise the true L1 objective by O(eps) near the optimum; such a step is
/// shortened by halving, and when no shortened step helps the iteration
/// stops at the current point.
inline L1Solution solve_l1(const SparseLinearSystem& sys, const L1Options& opts = {},
                           const L1Observer& observer = nullptr) {
    WeightedLeastSquares wls(sys);
    L1Solution out;
    out.x = wls.solve(Eigen::VectorXd::Ones(sys.rows));
    Eigen::VectorXd r = wls.residual(out.x);
    double objective = r.lpNorm<1>();
    out.objective.push_back(objective);
    if (observer) observer(0, r);
    for (int it = 1; it <= opts.max_iterations; ++it) {
        const Eigen::VectorXd w = r.cwiseAbs().cwiseMax(opts.epsilon).cwiseInverse();
        const Eigen::VectorXd target = wls.solve(w);
        Eigen::VectorXd step = target - out.x;
        Eigen::VectorXd next_r = wls.residual(target);
        double next_objective = next_r.lpNorm<1>();
        for (int halving = 0; halving < 30 && next_objective > objective; ++halving) {
            step *= 0.5;
            next_r = wls.residual(out.x + step);
            next_objective = next_r.lpNorm<1>();
        }
        if (next_objective > objective) {
            out.converged = true;
            break;
        }
        const double change = step.lpNorm<Eigen::Infinity>();
        out.x += step;
        const double scale = std::max(1.0, out.x.lpNorm<Eigen::Infinity>());
        r = std::move(next_r);
        objective = next_objective;
        out.objective.push_back(objective);
        out.iterations = it;
        if (observer) observer(it, r);
        if (change <= opts.tolerance * scale) {
            out.converged = true;
            break;
        }
    }
    return out;
}

}  // namespace csfm

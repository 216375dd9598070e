#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "csfm/errors.hpp"
#include "csfm/geometry.hpp"
#include "csfm/l1_solver.hpp"
#include "csfm/pairwise.hpp"
#include "csfm/reconstruction.hpp"

namespace csfm {

/// Measurements between communities. Community 0 carries the gauge.
struct MeasurementGraph {
    int community_count = 0;
    std::vector<PairwiseSimilarityMeasurement> measurements;
    bool allow_duplicates = false;  // several measurements of one pair; test harness only

    void validate() const {
        if (community_count <= 0) throw ValidationError("measurement graph has no communities");
        std::set<std::pair<int, int>> seen;
        for (const auto& m : measurements) {
            if (m.i < 0 || m.j < 0 || m.i >= community_count || m.j >= community_count)
                throw ValidationError("measurement (" + std::to_string(m.i) + "," + std::to_string(m.j) +
                                      ") references an unknown community");
            if (m.i >= m.j)
                throw ValidationError("measurement (" + std::to_string(m.i) + "," + std::to_string(m.j) +
                                      ") is not canonical (need i < j)");
            if (!(m.s_ij > 0.0) || !std::isfinite(m.s_ij))
                throw ValidationError("measurement scale must be positive and finite");
            if (!allow_duplicates && !seen.emplace(m.i, m.j).second)
                throw ValidationError("pair (" + std::to_string(m.i) + "," + std::to_string(m.j) +
                                      ") measured more than once");
        }
    }

    /// Throws DisconnectedError unless every community is reachable.
    void require_connected(const std::string& stage) const {
        std::vector<int> parent(community_count);
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int v) {
            while (parent[v] != v) v = parent[v] = parent[parent[v]];
            return v;
        };
        int groups = community_count;
        for (const auto& m : measurements) {
            const int a = find(m.i), b = find(m.j);
            if (a != b) {
                parent[b] = a;
                --groups;
            }
        }
        if (groups != 1)
            throw DisconnectedError(stage + ": measurement graph over " + std::to_string(community_count) +
                                    " communities has " + std::to_string(groups) + " connected pieces");
    }
};

/// Reorients a measurement to i < j: scale inverts, rotation transposes,
/// translation negates.
inline PairwiseSimilarityMeasurement canonicalize(PairwiseSimilarityMeasurement m) {
    if (m.i > m.j) {
        std::swap(m.i, m.j);
        m.s_ij = 1.0 / m.s_ij;
        m.r_ij = m.r_ij.inverse();
        if (m.t_ij) m.t_ij = -*m.t_ij;
    }
    return m;
}

struct CommunitySimilarity {
    int id = 0;
    Sim3 transform;  // local frame -> global frame
};

struct AveragingOptions {
    L1Options l1{1e-9, 400, 1e-12};  // residual floor bias is O(eps)
    int rotation_iterations = 32;
    double rotation_step_tolerance = 1e-9;
};

namespace detail {

/// Difference-operator system over the non-gauge unknowns: one row per
/// (measurement, component), +1 on unknown j and -1 on unknown i, so a row
/// reads x_j - x_i = b. Community 0 is eliminated.
inline SparseLinearSystem difference_system(const MeasurementGraph& mg, int dims,
                                            const std::vector<Eigen::VectorXd>& rhs_per_measurement) {
    SparseLinearSystem sys;
    sys.rows = static_cast<int>(mg.measurements.size()) * dims;
    sys.cols = (mg.community_count - 1) * dims;
    sys.rhs.resize(sys.rows);
    for (std::size_t k = 0; k < mg.measurements.size(); ++k) {
        const auto& m = mg.measurements[k];
        for (int d = 0; d < dims; ++d) {
            const int row = static_cast<int>(k) * dims + d;
            if (m.j != 0) sys.entries.push_back({row, (m.j - 1) * dims + d, 1.0});
            if (m.i != 0) sys.entries.push_back({row, (m.i - 1) * dims + d, -1.0});
            sys.rhs[row] = rhs_per_measurement[k][d];
        }
    }
    return sys;
}

}  // namespace detail

/// Per-community scales with s_0 = 1 from log s_i - log s_j = log s_ij,
/// solved in the L1 sense.
inline std::vector<double> average_scales(const MeasurementGraph& mg, const AveragingOptions& opts = {}) {
    mg.validate();
    mg.require_connected("scale averaging");
    std::vector<double> scales(mg.community_count, 1.0);
    if (mg.community_count == 1) return scales;
    // x_j - x_i = -log s_ij with x = log s
    std::vector<Eigen::VectorXd> rhs;
    for (const auto& m : mg.measurements) rhs.push_back(Eigen::VectorXd::Constant(1, -std::log(m.s_ij)));
    const L1Solution sol = solve_l1(detail::difference_system(mg, 1, rhs), opts.l1);
    for (int k = 1; k < mg.community_count; ++k) scales[k] = std::exp(sol.x[k - 1]);
    return scales;
}

struct RotationAveragingReport {
    int iterations = 0;
    bool converged = false;
    std::vector<double> residual_l1;  // sum over measurements of |log(R_j^T R_ij R_i)|_1, per outer iteration
};

/// Rotations R_k with R_0 = I satisfying R_ij = R_j R_i^T in the L1 sense.
/// Starts from spanning-tree chaining, then repeatedly solves the linearized
/// system delta_j - delta_i = log(R_j^T R_ij R_i) and updates R_k <- R_k exp(delta_k).
inline std::vector<Rotation> average_rotations(const MeasurementGraph& mg, const AveragingOptions& opts = {},
                                               RotationAveragingReport* report = nullptr) {
    mg.validate();
    mg.require_connected("rotation averaging");
    const int n = mg.community_count;
    std::vector<Rotation> rot(n);
    if (n == 1) return rot;

    std::vector<std::vector<std::size_t>> incident(n);
    for (std::size_t k = 0; k < mg.measurements.size(); ++k) {
        incident[mg.measurements[k].i].push_back(k);
        incident[mg.measurements[k].j].push_back(k);
    }
    std::vector<bool> known(n, false);
    known[0] = true;
    std::queue<int> frontier;
    frontier.push(0);
    while (!frontier.empty()) {
        const int u = frontier.front();
        frontier.pop();
        for (std::size_t k : incident[u]) {
            const auto& m = mg.measurements[k];
            if (m.i == u && !known[m.j]) {
                rot[m.j] = m.r_ij * rot[m.i];
                known[m.j] = true;
                frontier.push(m.j);
            } else if (m.j == u && !known[m.i]) {
                rot[m.i] = m.r_ij.inverse() * rot[m.j];
                known[m.i] = true;
                frontier.push(m.i);
            }
        }
    }

    RotationAveragingReport local;
    auto residuals = [&] {
        std::vector<Eigen::VectorXd> out;
        double total = 0.0;
        for (const auto& m : mg.measurements) {
            const AxisAngle d = log_rotation(rot[m.j].inverse() * m.r_ij * rot[m.i]);
            total += d.lpNorm<1>();
            out.emplace_back(d);
        }
        local.residual_l1.push_back(total);
        return out;
    };

    auto rhs = residuals();
    for (int it = 1; it <= opts.rotation_iterations; ++it) {
        const L1Solution sol = solve_l1(detail::difference_system(mg, 3, rhs), opts.l1);
        double step = 0.0;
        for (int k = 1; k < n; ++k) {
            const AxisAngle delta = sol.x.segment<3>(3 * (k - 1));
            step = std::max(step, delta.norm());
            rot[k] = rot[k] * exp_rotation(delta);
        }
        local.iterations = it;
        rhs = residuals();
        if (step < opts.rotation_step_tolerance) {
            local.converged = true;
            break;
        }
    }
    if (report) *report = std::move(local);
    return rot;
}

struct TranslationRecompute {
    MeasurementGraph graph;  // surviving measurements with t_ij set
    std::vector<std::string> warnings;
};

/// Sets t_ij for every measurement from reconstructions mapped by s_k R_k.
/// When a measurement lists RANSAC inlier tracks only those are used.
/// Pairs without co-visible tracks are dropped with a warning.
inline TranslationRecompute recompute_pairwise_translations(const std::vector<Reconstruction>& recs,
                                                            const std::vector<double>& scales,
                                                            const std::vector<Rotation>& rotations,
                                                            const MeasurementGraph& mg) {
    mg.validate();
    const int n = mg.community_count;
    if (static_cast<int>(recs.size()) != n || static_cast<int>(scales.size()) != n ||
        static_cast<int>(rotations.size()) != n)
        throw ValidationError("translation recompute: inputs do not cover all communities");
    std::vector<Reconstruction> moved;
    moved.reserve(n);
    for (int k = 0; k < n; ++k) moved.push_back(scale_rotate_points(recs[k], scales[k], rotations[k]));

    TranslationRecompute out;
    out.graph.community_count = n;
    out.graph.allow_duplicates = mg.allow_duplicates;
    for (PairwiseSimilarityMeasurement m : mg.measurements) {
        Reconstruction a = moved[m.i];
        Reconstruction b = moved[m.j];
        if (!m.inlier_tracks.empty()) {
            const std::set<TrackId> keep(m.inlier_tracks.begin(), m.inlier_tracks.end());
            std::erase_if(a.points, [&](const ScenePoint& p) { return !keep.count(p.track); });
        }
        if (covisible(a, b).empty()) {
            out.warnings.push_back("dropping pair (" + std::to_string(m.i) + "," + std::to_string(m.j) +
                                   "): no co-visible tracks survive");
            continue;
        }
        m.t_ij = recompute_translation(a, b);
        out.graph.measurements.push_back(m);
    }
    out.graph.require_connected("translation recompute");
    return out;
}

/// Translations with T_0 = 0 from T_ij = T_j - T_i, one L1 solve per axis.
inline std::vector<Vec3> average_translations(const MeasurementGraph& mg, const AveragingOptions& opts = {}) {
    mg.validate();
    mg.require_connected("translation averaging");
    for (const auto& m : mg.measurements)
        if (!m.t_ij)
            throw ValidationError("translation averaging: pair (" + std::to_string(m.i) + "," +
                                  std::to_string(m.j) + ") has no translation");
    std::vector<Vec3> t(mg.community_count, Vec3::Zero());
    if (mg.community_count == 1) return t;
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<Eigen::VectorXd> rhs;
        for (const auto& m : mg.measurements) rhs.push_back(Eigen::VectorXd::Constant(1, (*m.t_ij)[axis]));
        const L1Solution sol = solve_l1(detail::difference_system(mg, 1, rhs), opts.l1);
        for (int k = 1; k < mg.community_count; ++k) t[k][axis] = sol.x[k - 1];
    }
    return t;
}

struct SimilarityAveraging {
    std::vector<CommunitySimilarity> transforms;
    RotationAveragingReport rotation_report;
    MeasurementGraph translated;  // measurements that survived translation recompute
    std::vector<std::string> warnings;
};

/// Scales, then rotations, then translation recompute, then translations.
/// Pairwise rotations are frame-alignment rotations R_j^T R_i, i.e. the
/// averaging form in Q_k = R_k^T, so the averaged rotations are transposed
/// back into local-to-global rotations.
inline SimilarityAveraging average_similarities(const std::vector<Reconstruction>& recs, const MeasurementGraph& mg,
                                                const AveragingOptions& opts = {}) {
    SimilarityAveraging out;
    const std::vector<double> scales = average_scales(mg, opts);
    const std::vector<Rotation> q = average_rotations(mg, opts, &out.rotation_report);
    std::vector<Rotation> rotations;
    for (const Rotation& r : q) rotations.push_back(r.inverse());
    TranslationRecompute tr = recompute_pairwise_translations(recs, scales, rotations, mg);
    const std::vector<Vec3> translations = average_translations(tr.graph, opts);
    for (int k = 0; k < mg.community_count; ++k) out.transforms.push_back({k, Sim3{scales[k], rotations[k], translations[k]}});
    out.translated = std::move(tr.graph);
    out.warnings = std::move(tr.warnings);
    return out;
}

}  // namespace csfm

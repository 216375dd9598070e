#pragma once

// Planted community similarities and the exact measurements they induce.

#include <random>
#include <set>
#include <utility>
#include <vector>

#include "csfm/averaging.hpp"
#include "oracles.hpp"

namespace planted {

struct Truth {
    std::vector<double> s;
    std::vector<csfm::Rotation> r;
    std::vector<csfm::Vec3> t;

    /// Same set with community 0 moved to (1, I, 0): s_i / s_0, R_i R_0^T, T_i - T_0.
    Truth gauge_normalized() const {
        Truth out = *this;
        for (std::size_t k = 0; k < s.size(); ++k) {
            out.s[k] = s[k] / s[0];
            out.r[k] = r[k] * r[0].inverse();
            out.t[k] = t[k] - t[0];
        }
        return out;
    }
};

inline Truth random_truth(std::mt19937_64& rng, int n) {
    Truth tr;
    std::uniform_real_distribution<double> log_s(std::log(0.25), std::log(4.0));
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    for (int k = 0; k < n; ++k) {
        tr.s.push_back(std::exp(log_s(rng)));
        tr.r.push_back(csfm::Rotation::from_matrix(oracle::random_rotation_matrix(rng)));
        tr.t.emplace_back(u(rng), u(rng), u(rng));
    }
    return tr;
}

/// Random connected simple graph: spanning tree plus extra edges, pairs as (i < j).
inline std::vector<std::pair<int, int>> random_connected_pairs(std::mt19937_64& rng, int n, double p) {
    const csfm::EpipolarGraph g = oracle::random_connected_graph(rng, n, p);
    std::vector<std::pair<int, int>> pairs;
    for (const auto& e : g.edges()) pairs.emplace_back(std::min(e.i, e.j), std::max(e.i, e.j));
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

/// Measurements in the averaging form s_ij = s_i / s_j, R_ij = R_j R_i^T, T_ij = T_j - T_i.
inline csfm::MeasurementGraph exact_measurements(const Truth& tr, const std::vector<std::pair<int, int>>& pairs) {
    csfm::MeasurementGraph mg;
    mg.community_count = static_cast<int>(tr.s.size());
    for (const auto& [i, j] : pairs) {
        csfm::PairwiseSimilarityMeasurement m;
        m.i = i;
        m.j = j;
        m.s_ij = tr.s[i] / tr.s[j];
        m.r_ij = tr.r[j] * tr.r[i].inverse();
        m.t_ij = tr.t[j] - tr.t[i];
        mg.measurements.push_back(m);
    }
    return mg;
}

struct Errors {
    double scale = 0.0;        // max relative
    double rotation = 0.0;     // max geodesic radians
    double translation = 0.0;  // max absolute
};

inline Errors compare(const Truth& normalized, const std::vector<double>& s, const std::vector<csfm::Rotation>& r,
                      const std::vector<csfm::Vec3>& t) {
    Errors e;
    for (std::size_t k = 0; k < normalized.s.size(); ++k) {
        e.scale = std::max(e.scale, std::abs(s[k] / normalized.s[k] - 1.0));
        e.rotation = std::max(e.rotation, oracle::angle_between(r[k].matrix(), normalized.r[k].matrix()));
        e.translation = std::max(e.translation, (t[k] - normalized.t[k]).norm());
    }
    return e;
}

/// Circulant graph C_n(1, .., k): node i linked to i +- 1..k (mod n). Its edges
/// split into the edge-disjoint rings of each step length.
inline std::vector<std::vector<std::pair<int, int>>> circulant_rings(int n, int k) {
    std::vector<std::vector<std::pair<int, int>>> rings;
    for (int step = 1; step <= k; ++step) {
        std::vector<bool> used(n, false);
        for (int start = 0; start < n; ++start) {
            if (used[start]) continue;
            std::vector<std::pair<int, int>> ring;
            int v = start;
            do {
                used[v] = true;
                const int w = (v + step) % n;
                ring.emplace_back(std::min(v, w), std::max(v, w));
                v = w;
            } while (v != start);
            rings.push_back(ring);
        }
    }
    return rings;
}

}  // namespace planted

#pragma once

// Independent reference implementations used as test oracles. They
// share no code with the library beyond the data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "csfm/eg_graph.hpp"

namespace oracle {

/// Dense adjacency matrix from an edge list.
inline Eigen::MatrixXd adjacency(const csfm::EpipolarGraph& g) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.node_count(), g.node_count());
    for (const auto& e : g.edges()) a(e.i, e.j) = a(e.j, e.i) = 1.0;
    return a;
}

/// Q = 1/(2m) sum_ij [A_ij - k_i k_j / 2m] delta(c_i, c_j), summed over all ordered pairs.
inline double modularity(const csfm::EpipolarGraph& g, const std::vector<int>& labels) {
    const Eigen::MatrixXd a = adjacency(g);
    const Eigen::VectorXd k = a.rowwise().sum();
    const double two_m = k.sum();
    double q = 0.0;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.rows(); ++j)
            if (labels[i] == labels[j]) q += a(i, j) - k[i] * k[j] / two_m;
    return q / two_m;
}

/// Calls fn on every set partition of {0..n-1} as a restricted growth string.
inline void for_each_set_partition(int n, const std::function<void(const std::vector<int>&)>& fn) {
    std::vector<int> labels(n, 0);
    std::function<void(int, int)> rec = [&](int pos, int used) {
        if (pos == n) {
            fn(labels);
            return;
        }
        for (int c = 0; c <= used; ++c) {
            labels[pos] = c;
            rec(pos + 1, std::max(used, c + 1));
        }
    };
    if (n == 0) return;
    labels[0] = 0;
    rec(1, 1);
}

inline double max_modularity(const csfm::EpipolarGraph& g) {
    double best = -1.0;
    for_each_set_partition(g.node_count(), [&](const std::vector<int>& l) { best = std::max(best, modularity(g, l)); });
    return best;
}

/// Connected G(n, p) sample: a random spanning tree plus independent extra edges.
inline csfm::EpipolarGraph random_connected_graph(std::mt19937_64& rng, int n, double p) {
    std::vector<csfm::Edge> edges;
    std::vector<std::vector<bool>> has(n, std::vector<bool>(n, false));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 1; k < n; ++k) {
        const int parent = order[std::uniform_int_distribution<int>(0, k - 1)(rng)];
        const int child = order[k];
        edges.push_back({parent, child, 1});
        has[parent][child] = has[child][parent] = true;
    }
    std::bernoulli_distribution coin(p);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (!has[i][j] && coin(rng)) edges.push_back({i, j, 1});
    return csfm::EpipolarGraph(n, edges);
}

inline std::vector<csfm::Edge> clique(int first, int size) {
    std::vector<csfm::Edge> edges;
    for (int i = first; i < first + size; ++i)
        for (int j = i + 1; j < first + size; ++j) edges.push_back({i, j, 1});
    return edges;
}

/// Rotation matrix from axis-angle by the Rodrigues formula, written out.
inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& w) {
    const double theta = w.norm();
    if (theta == 0.0) return Eigen::Matrix3d::Identity();
    const Eigen::Vector3d k = w / theta;
    Eigen::Matrix3d kx;
    kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
    return Eigen::Matrix3d::Identity() + std::sin(theta) * kx + (1.0 - std::cos(theta)) * kx * kx;
}

/// Geodesic angle between two rotation matrices from the chord length,
/// |A - B|_F = 2 sqrt(2) sin(theta / 2); accurate near zero unlike acos of the trace.
inline double angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    const double chord = (a - b).norm() / (2.0 * std::sqrt(2.0));
    return 2.0 * std::asin(std::min(1.0, chord));
}

inline Eigen::Matrix3d random_rotation_matrix(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector3d axis(n(rng), n(rng), n(rng));
    axis.normalize();
    std::uniform_real_distribution<double> ang(0.0, 3.0);
    return rodrigues(axis * ang(rng));
}

}  // namespace oracle

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csfm/errors.hpp"

namespace csfm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using TrackId = std::int64_t;

/// Rotation vector: direction is the axis, norm is the angle in radians.
using AxisAngle = Eigen::Vector3d;

/// Unit quaternion rotation, scalar first, kept on the w >= 0 hemisphere.
class Rotation {
public:
    Rotation() : q_(Eigen::Quaterniond::Identity()) {}

    Rotation(double w, double x, double y, double z) : q_(w, x, y, z) { normalize(); }

    explicit Rotation(const Eigen::Quaterniond& q) : q_(q) { normalize(); }

    static Rotation identity() { return {}; }

    static Rotation from_matrix(const Mat3& m) { return Rotation(Eigen::Quaterniond(m)); }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    static Rotation about(const Vec3& axis, double angle) {
        return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
    }

    double w() const { return q_.w(); }
    double x() const { return q_.x(); }
    double y() const { return q_.y(); }
    double z() const { return q_.z(); }
    const Eigen::Quaterniond& quaternion() const { return q_; }
    Mat3 matrix() const { return q_.toRotationMatrix(); }

    Rotation inverse() const { return Rotation(q_.conjugate()); }
    Rotation operator*(const Rotation& other) const { return Rotation(q_ * other.q_); }
    Vec3 operator*(const Vec3& v) const { return q_ * v; }

private:
    void normalize() {
        const double n = q_.norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("rotation quaternion has zero or non-finite norm");
        // already unit to rounding: leave the bits alone so file round trips are exact
        if (std::abs(n - 1.0) > 4.0 * std::numeric_limits<double>::epsilon()) q_.coeffs() /= n;
        if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
    }

    Eigen::Quaterniond q_;
};

/// Principal-branch logarithm, |result| <= pi. At exactly pi the axis is
/// signed so its largest-magnitude component is positive.
inline AxisAngle log_rotation(const Rotation& r) {
    const Vec3 v(r.x(), r.y(), r.z());
    const double n = v.norm();
    const double w = r.w();
    if (n < 1e-9) {
        // angle/sin(angle/2) ~ 2/w (1 - n^2/(3 w^2)); the correction is below double precision here
        return (2.0 / w) * v;
    }
    const double angle = 2.0 * std::atan2(n, w);
    Vec3 axis = v / n;
    if (w == 0.0) {
        Eigen::Index k = 0;
        axis.cwiseAbs().maxCoeff(&k);
        if (axis[k] < 0.0) axis = -axis;
    }
    return angle * axis;
}

inline Rotation exp_rotation(const AxisAngle& w) {
    const double theta = w.norm();
    const double half = 0.5 * theta;
    // sin(theta/2)/theta with a series near zero
    const double k = theta < 1e-6 ? 0.5 - theta * theta / 48.0 : std::sin(half) / theta;
    return Rotation(std::cos(half), k * w.x(), k * w.y(), k * w.z());
}

/// Geodesic distance between two rotations, radians in [0, pi].
inline double angular_distance(const Rotation& a, const Rotation& b) {
    return log_rotation(a.inverse() * b).norm();
}

/// Similarity transform p -> s * R * p + t.
struct Sim3 {
    double s = 1.0;
    Rotation r;
    Vec3 t = Vec3::Zero();

    static Sim3 identity() { return {}; }

    Vec3 operator()(const Vec3& p) const { return s * (r * p) + t; }
};

inline Vec3 apply_sim3(const Sim3& x, const Vec3& p) { return x(p); }

/// Applies y first, then x.
inline Sim3 compose(const Sim3& x, const Sim3& y) { return {x.s * y.s, x.r * y.r, x.s * (x.r * y.t) + x.t}; }

inline Sim3 inverse(const Sim3& x) {
    const Rotation rt = x.r.inverse();
    return {1.0 / x.s, rt, -(1.0 / x.s) * (rt * x.t)};
}

struct Correspondence {
    TrackId track = 0;
    Vec3 a = Vec3::Zero();  // position in frame A
    Vec3 b = Vec3::Zero();  // position in frame B
};

using CorrespondenceSet = std::vector<Correspondence>;

namespace detail {

inline double median_inplace(std::vector<double>& values) {
    if (values.empty()) throw NumericError("median of an empty set");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + mid);
    return 0.5 * (lower + upper);
}

inline Vec3 componentwise_median(std::span<const Vec3> points) {
    Vec3 out;
    std::vector<double> buf(points.size());
    for (int axis = 0; axis < 3; ++axis) {
        for (std::size_t k = 0; k < points.size(); ++k) buf[k] = points[k][axis];
        out[axis] = median_inplace(buf);
    }
    return out;
}

}  // namespace detail

/// Closed-form least-squares similarity mapping frame A onto frame B:
/// centroids, scale from the ratio of RMS deviations, rotation from the SVD
/// of the cross-covariance, translation from the centroids.
inline Sim3 horn_similarity(std::span<const Correspondence> c) {
    if (c.size() < 3)
        throw NumericError("horn_similarity needs at least 3 correspondences, got " + std::to_string(c.size()));
    const double n = static_cast<double>(c.size());
    Vec3 mean_a = Vec3::Zero(), mean_b = Vec3::Zero();
    for (const auto& k : c) {
        mean_a += k.a;
        mean_b += k.b;
    }
    mean_a /= n;
    mean_b /= n;

    double ss_a = 0.0, ss_b = 0.0;
    Mat3 scatter_a = Mat3::Zero();
    Mat3 cross = Mat3::Zero();
    for (const auto& k : c) {
        const Vec3 da = k.a - mean_a;
        const Vec3 db = k.b - mean_b;
        ss_a += da.squaredNorm();
        ss_b += db.squaredNorm();
        scatter_a += da * da.transpose();
        cross += db * da.transpose();
    }
    if (!(ss_a > 0.0) || !(ss_b > 0.0)) throw NumericError("horn_similarity: coincident points");

    const Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter_a);
    const Vec3 lambda = eig.eigenvalues();  // ascending
    if (lambda[1] <= 1e-10 * lambda[2]) throw NumericError("horn_similarity: source points are collinear");

    const Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (sv[1] <= 1e-10 * sv[0]) throw NumericError("horn_similarity: rotation is unobservable");
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    const Mat3 rot = svd.matrixU() * d * svd.matrixV().transpose();

    Sim3 out;
    out.s = std::sqrt(ss_b / ss_a);
    out.r = Rotation::from_matrix(rot);
    out.t = mean_b - out.s * (out.r * mean_a);
    return out;
}

struct RansacOptions {
    double inlier_threshold = 0.0;  // <= 0 selects 0.01 x median extent of the B cloud
    int max_iterations = 1024;
    double confidence = 0.999;
    std::uint64_t seed = 0;
};

struct RansacResult {
    Sim3 transform;
    std::vector<TrackId> inliers;  // ascending
    double threshold = 0.0;
    int iterations = 0;
};

/// Default inlier threshold: 0.01 times the median distance of the B points
/// to their component-wise median.
inline double default_inlier_threshold(std::span<const Correspondence> c) {
    std::vector<Vec3> pts;
    pts.reserve(c.size());
    for (const auto& k : c) pts.push_back(k.b);
    const Vec3 center = detail::componentwise_median(pts);
    std::vector<double> dist;
    dist.reserve(pts.size());
    for (const Vec3& p : pts) dist.push_back((p - center).norm());
    return 0.01 * detail::median_inplace(dist);
}

/// Robust similarity from frame A to frame B. Correspondences are sorted by
/// track id first, so the result depends only on the set and the seed.
inline RansacResult ransac_similarity(CorrespondenceSet c, const RansacOptions& opts = {}) {
    if (c.size() < 3) throw NumericError("ransac_similarity needs at least 3 correspondences");
    std::sort(c.begin(), c.end(), [](const auto& l, const auto& r) { return l.track < r.track; });
    for (std::size_t k = 1; k < c.size(); ++k)
        if (c[k].track == c[k - 1].track) throw ValidationError("duplicate track id in correspondence set");

    const double threshold = opts.inlier_threshold > 0.0 ? opts.inlier_threshold : default_inlier_threshold(c);
    if (!(threshold > 0.0)) throw NumericError("ransac_similarity: degenerate correspondence cloud");

    auto inliers_of = [&](const Sim3& x) {
        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < c.size(); ++k)
            if ((c[k].b - x(c[k].a)).norm() < threshold) idx.push_back(k);
        return idx;
    };
    auto subset = [&](const std::vector<std::size_t>& idx) {
        CorrespondenceSet out;
        out.reserve(idx.size());
        for (std::size_t k : idx) out.push_back(c[k]);
        return out;
    };

    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::size_t> pick(0, c.size() - 1);
    std::vector<std::size_t> best;
    Sim3 best_model;
    const double n = static_cast<double>(c.size());
    double needed = opts.max_iterations;
    int iter = 0;
    for (; iter < opts.max_iterations && iter < needed; ++iter) {
        std::size_t s0 = pick(rng), s1 = pick(rng), s2 = pick(rng);
        if (s0 == s1 || s0 == s2 || s1 == s2) continue;
        const Correspondence sample[3] = {c[s0], c[s1], c[s2]};
        Sim3 model;
        try {
            model = horn_similarity(sample);
        } catch (const NumericError&) {
            continue;
        }
        auto idx = inliers_of(model);
        if (idx.size() > best.size()) {
            best = std::move(idx);
            best_model = model;
            const double ratio = static_cast<double>(best.size()) / n;
            const double p_good = ratio * ratio * ratio;
            if (p_good >= 1.0) {
                needed = 0;
            } else if (p_good > 0.0) {
                needed = std::log(1.0 - opts.confidence) / std::log(1.0 - p_good);
            }
        }
    }
    if (best.size() < 3) throw NumericError("ransac_similarity: no hypothesis reached 3 inliers");

    Sim3 model = best_model;
    for (int round = 0; round < 5; ++round) {
        Sim3 refit;
        try {
            refit = horn_similarity(subset(best));
        } catch (const NumericError&) {
            break;
        }
        auto idx = inliers_of(refit);
        if (idx.size() < 3) break;
        model = refit;
        if (idx == best) break;
        best = std::move(idx);
    }

    RansacResult out;
    out.transform = model;
    out.threshold = threshold;
    out.iterations = iter;
    for (std::size_t k : best) out.inliers.push_back(c[k].track);
    return out;
}

}  // namespace csfm

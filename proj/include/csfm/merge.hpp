#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "csfm/averaging.hpp"
#include "csfm/errors.hpp"
#include "csfm/geometry.hpp"
#include "csfm/parallel.hpp"
#include "csfm/reconstruction.hpp"

namespace csfm {

struct MergedCamera {
    CameraId id = 0;
    int community = 0;
    Rotation rotation;  // world to camera, global frame
    Vec3 center = Vec3::Zero();
};

struct MergedPoint {
    TrackId track = 0;
    Vec3 position = Vec3::Zero();
    std::vector<int> communities;  // contributing communities, ascending
    double spread = 0.0;           // largest distance of a contribution from the fused position
};

/// United reconstruction in the global frame; cameras sorted by id, points by track.
struct MergedModel {
    std::vector<MergedCamera> cameras;
    std::vector<MergedPoint> points;
};

namespace detail {

inline std::map<int, Sim3> transform_lookup(const std::vector<Reconstruction>& recs,
                                            const std::vector<CommunitySimilarity>& transforms) {
    std::map<int, Sim3> by_id;
    for (const auto& t : transforms)
        if (!by_id.emplace(t.id, t.transform).second)
            throw ValidationError("duplicate transform for community " + std::to_string(t.id));
    for (const auto& rec : recs)
        if (!by_id.count(rec.community))
            throw ValidationError("missing transform for community " + std::to_string(rec.community));
    return by_id;
}

}  // namespace detail

/// Maps every community into the global frame. Points go through
/// X' = s R X and then X' + T; cameras through R^g = R^o R^T and
/// C^g = s R C^o + T. A track seen by several communities is fused to the
/// component-wise median of its transformed positions.
inline MergedModel merge_reconstructions(const std::vector<Reconstruction>& recs,
                                         const std::vector<CommunitySimilarity>& transforms, int workers = 1) {
    const auto by_id = detail::transform_lookup(recs, transforms);

    struct Moved {
        std::vector<MergedCamera> cameras;
        std::vector<std::pair<TrackId, Vec3>> points;
    };
    const std::vector<Moved> moved = parallel_map(recs.size(), workers, [&](std::size_t k) {
        const Reconstruction& rec = recs[k];
        const Sim3& x = by_id.at(rec.community);
        Moved out;
        for (const auto& cam : rec.cameras)
            out.cameras.push_back({cam.id, rec.community, cam.rotation * x.r.inverse(), x(cam.center)});
        for (const auto& p : rec.points) {
            const Vec3 rotated = x.s * (x.r * p.position);
            out.points.emplace_back(p.track, rotated + x.t);
        }
        return out;
    });

    MergedModel model;
    std::set<CameraId> seen;
    std::map<TrackId, std::vector<std::pair<int, Vec3>>> tracks;
    for (std::size_t k = 0; k < recs.size(); ++k) {
        for (const auto& cam : moved[k].cameras) {
            if (!seen.insert(cam.id).second)
                throw ValidationError("camera " + std::to_string(cam.id) + " appears in more than one community");
            model.cameras.push_back(cam);
        }
        for (const auto& [track, pos] : moved[k].points) tracks[track].emplace_back(recs[k].community, pos);
    }
    std::sort(model.cameras.begin(), model.cameras.end(), [](const auto& l, const auto& r) { return l.id < r.id; });

    for (auto& [track, contributions] : tracks) {
        std::sort(contributions.begin(), contributions.end(),
                  [](const auto& l, const auto& r) { return l.first < r.first; });
        MergedPoint mp;
        mp.track = track;
        std::vector<Vec3> positions;
        for (const auto& [community, pos] : contributions) {
            mp.communities.push_back(community);
            positions.push_back(pos);
        }
        mp.position = positions.size() == 1 ? positions.front() : detail::componentwise_median(positions);
        for (const Vec3& p : positions) mp.spread = std::max(mp.spread, (p - mp.position).norm());
        model.points.push_back(std::move(mp));
    }
    return model;
}

struct RefineOptions {
    double huber_scale = 0.0;  // <= 0: 0.01 x median extent of the co-visible cloud
    int max_iterations = 50;
    double relative_decrease = 1e-10;
    // Optional per community pair (i < j) whitelist of tracks; pairs absent
    // from the map contribute nothing. Unset: every co-visible track is used.
    std::optional<std::map<std::pair<int, int>, std::set<TrackId>>> track_gate;
};

/// Gate built from the RANSAC inlier sets of pairwise measurements.
inline std::map<std::pair<int, int>, std::set<TrackId>> inlier_gate(const MeasurementGraph& mg) {
    std::map<std::pair<int, int>, std::set<TrackId>> gate;
    for (const auto& m : mg.measurements) {
        auto& tracks = gate[{std::min(m.i, m.j), std::max(m.i, m.j)}];
        tracks.insert(m.inlier_tracks.begin(), m.inlier_tracks.end());
    }
    return gate;
}

struct RefineResult {
    std::vector<CommunitySimilarity> transforms;
    MergedModel model;
    bool skipped = false;
    std::string notice;
    int iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    double huber_scale = 0.0;
};

namespace detail {

inline double huber(double r, double delta) { return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta); }

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

}  // namespace detail

/// Levenberg-Marquardt refinement of all non-gauge community similarities
/// against the co-visible points: minimizes the Huber loss of
/// (s_a R_a X_a + T_a) - (s_b R_b X_b + T_b) over every track shared by
/// communities a and b. Parameter updates are s <- s exp(ds),
/// R <- exp(dw) R, T <- T + dT. The lowest community id is held fixed.
inline RefineResult joint_refine(const std::vector<Reconstruction>& recs,
                                 const std::vector<CommunitySimilarity>& transforms, const RefineOptions& opts = {},
                                 int workers = 1) {
    RefineResult out;
    out.transforms = transforms;
    std::sort(out.transforms.begin(), out.transforms.end(), [](const auto& l, const auto& r) { return l.id < r.id; });
    detail::transform_lookup(recs, out.transforms);
    std::map<int, int> slot;  // community id -> index in out.transforms
    for (std::size_t k = 0; k < out.transforms.size(); ++k) slot[out.transforms[k].id] = static_cast<int>(k);

    // (track, community slot, local position) grouped by track
    std::map<TrackId, std::vector<std::pair<int, Vec3>>> shared;
    for (const auto& rec : recs)
        for (const auto& p : rec.points) shared[p.track].emplace_back(slot.at(rec.community), p.position);
    struct Pair {
        int a, b;
        Vec3 xa, xb;
    };
    std::vector<Pair> pairs;
    for (auto& [track, list] : shared) {
        std::sort(list.begin(), list.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
        for (std::size_t u = 0; u < list.size(); ++u)
            for (std::size_t v = u + 1; v < list.size(); ++v) {
                const int a = list[u].first, b = list[v].first;
                if (opts.track_gate) {
                    auto it = opts.track_gate->find({out.transforms[a].id, out.transforms[b].id});
                    if (it == opts.track_gate->end() || !it->second.count(track)) continue;
                }
                pairs.push_back({a, b, list[u].second, list[v].second});
            }
    }

    if (out.transforms.size() < 2 || pairs.empty()) {
        out.skipped = true;
        out.notice = out.transforms.size() < 2 ? "refinement skipped: single community"
                                               : "refinement skipped: no co-visible tracks";
        out.model = merge_reconstructions(recs, out.transforms, workers);
        return out;
    }

    double delta = opts.huber_scale;
    if (!(delta > 0.0)) {
        std::vector<Vec3> cloud;
        for (const auto& p : pairs) cloud.push_back(out.transforms[p.b].transform(p.xb));
        const Vec3 center = detail::componentwise_median(cloud);
        std::vector<double> dist;
        for (const Vec3& c : cloud) dist.push_back((c - center).norm());
        delta = 0.01 * detail::median_inplace(dist);
    }
    out.huber_scale = delta;

    const int unknowns = 7 * (static_cast<int>(out.transforms.size()) - 1);
    auto cost_of = [&](const std::vector<CommunitySimilarity>& xs) {
        double c = 0.0;
        for (const auto& p : pairs)
            c += detail::huber((xs[p.a].transform(p.xa) - xs[p.b].transform(p.xb)).norm(), delta);
        return c;
    };
    auto apply_step = [&](const Eigen::VectorXd& step) {
        std::vector<CommunitySimilarity> xs = out.transforms;
        for (std::size_t k = 1; k < xs.size(); ++k) {
            const auto seg = step.segment<7>(7 * (static_cast<int>(k) - 1));
            Sim3& x = xs[k].transform;
            x.s *= std::exp(seg[0]);
            x.r = exp_rotation(seg.segment<3>(1)) * x.r;
            x.t += seg.segment<3>(4);
        }
        return xs;
    };

    double cost = cost_of(out.transforms);
    out.initial_cost = cost;
    double lambda = 1e-6;
    for (int it = 0; it < opts.max_iterations && cost > 0.0; ++it) {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(unknowns, unknowns);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(unknowns);
        for (const auto& p : pairs) {
            const Sim3& xa = out.transforms[p.a].transform;
            const Sim3& xb = out.transforms[p.b].transform;
            const Vec3 ya = xa.s * (xa.r * p.xa);
            const Vec3 yb = xb.s * (xb.r * p.xb);
            const Vec3 e = ya + xa.t - (yb + xb.t);
            const double r = e.norm();
            const double w = r <= delta ? 1.0 : delta / r;
            Eigen::Matrix<double, 3, 7> ja, jb;
            ja << ya, -detail::skew(ya), Mat3::Identity();
            jb << -yb, detail::skew(yb), -Mat3::Identity();
            if (p.a > 0) {
                const int oa = 7 * (p.a - 1);
                h.block<7, 7>(oa, oa) += w * ja.transpose() * ja;
                g.segment<7>(oa) += w * ja.transpose() * e;
            }
            if (p.b > 0) {
                const int ob = 7 * (p.b - 1);
                h.block<7, 7>(ob, ob) += w * jb.transpose() * jb;
                g.segment<7>(ob) += w * jb.transpose() * e;
            }
            if (p.a > 0 && p.b > 0) {
                const int oa = 7 * (p.a - 1), ob = 7 * (p.b - 1);
                const Eigen::Matrix<double, 7, 7> cross = w * ja.transpose() * jb;
                h.block<7, 7>(oa, ob) += cross;
                h.block<7, 7>(ob, oa) += cross.transpose();
            }
        }
        bool accepted = false;
        for (int attempt = 0; attempt < 20 && !accepted; ++attempt) {
            Eigen::MatrixXd damped = h;
            damped.diagonal() += lambda * (h.diagonal().array() + 1e-12).matrix();
            const Eigen::VectorXd step = damped.ldlt().solve(-g);
            if (!step.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            auto candidate = apply_step(step);
            const double next = cost_of(candidate);
            if (next <= cost) {
                out.transforms = std::move(candidate);
                const double decrease = (cost - next) / std::max(cost, std::numeric_limits<double>::min());
                cost = next;
                lambda = std::max(lambda * 0.1, 1e-12);
                accepted = true;
                out.iterations = it + 1;
                if (decrease < opts.relative_decrease) it = opts.max_iterations;
            } else {
                lambda *= 10.0;
            }
        }
        if (!accepted) break;
    }
    out.final_cost = cost;
    out.model = merge_reconstructions(recs, out.transforms, workers);
    return out;
}

struct EvaluationReport {
    int cameras = 0;
    int aligned_inliers = 0;
    double median_center_error = 0.0;
    double rmse_center_error = 0.0;
    double median_rotation_error = 0.0;  // radians
    int shared_points = 0;
    double point_rmse = 0.0;
    Sim3 alignment;  // model frame -> truth frame
};

/// Aligns the model to the truth with a robust similarity fit on camera
/// centers (RANSAC hypotheses, least-squares refit on the inliers), then
/// measures camera and point errors in truth units.
inline EvaluationReport evaluate_against_truth(const MergedModel& model, const std::vector<CameraPose>& truth_cameras,
                                               const std::vector<ScenePoint>& truth_points) {
    std::map<CameraId, const CameraPose*> truth;
    for (const auto& c : truth_cameras) truth[c.id] = &c;
    CorrespondenceSet centers;
    for (const auto& c : model.cameras) {
        auto it = truth.find(c.id);
        if (it == truth.end())
            throw ValidationError("model camera " + std::to_string(c.id) + " is not in the ground truth");
        centers.push_back({c.id, c.center, it->second->center});
    }
    if (centers.size() < 3) throw NumericError("evaluation needs at least 3 common cameras");

    const RansacResult fit = ransac_similarity(centers, RansacOptions{});
    EvaluationReport rep;
    rep.alignment = fit.transform;
    rep.aligned_inliers = static_cast<int>(fit.inliers.size());
    rep.cameras = static_cast<int>(model.cameras.size());

    const Rotation align_inv = fit.transform.r.inverse();
    std::vector<double> center_err, rot_err;
    double sq = 0.0;
    for (const auto& c : model.cameras) {
        const CameraPose& t = *truth.at(c.id);
        const double e = (fit.transform(c.center) - t.center).norm();
        center_err.push_back(e);
        sq += e * e;
        rot_err.push_back(angular_distance(t.rotation, c.rotation * align_inv));
    }
    rep.rmse_center_error = std::sqrt(sq / static_cast<double>(center_err.size()));
    rep.median_center_error = detail::median_inplace(center_err);
    rep.median_rotation_error = detail::median_inplace(rot_err);

    std::map<TrackId, Vec3> truth_pts;
    for (const auto& p : truth_points) truth_pts[p.track] = p.position;
    double psq = 0.0;
    for (const auto& p : model.points) {
        auto it = truth_pts.find(p.track);
        if (it == truth_pts.end()) continue;
        psq += (fit.transform(p.position) - it->second).squaredNorm();
        ++rep.shared_points;
    }
    if (rep.shared_points > 0) rep.point_rmse = std::sqrt(psq / rep.shared_points);
    return rep;
}

}  // namespace csfm

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "csfm/geometry.hpp"
#include "csfm/reconstruction.hpp"

namespace csfm {

/// Relative similarity between communities i and j (i < j).
///
/// Frame model: community k maps to the global frame by X = s_k R_k X_k + T_k.
/// Then s_ij = s_i / s_j, r_ij = R_j^T R_i (the rotation of the frame i -> j
/// alignment) and t_ij = T_j - T_i once set. Writing Q_k = R_k^T, the rotation
/// reads r_ij = Q_j Q_i^T, which is the form rotation averaging consumes.
struct PairwiseSimilarityMeasurement {
    int i = 0;
    int j = 0;
    double s_ij = 1.0;
    Rotation r_ij;
    std::optional<Vec3> t_ij;
    int inlier_count = 0;
    std::vector<TrackId> inlier_tracks;  // RANSAC inliers, ascending; may be empty
};

/// Robust frame-i -> frame-j similarity from the co-visible tracks.
inline PairwiseSimilarityMeasurement pairwise_measurement(const Reconstruction& rec_i, const Reconstruction& rec_j,
                                                          const RansacOptions& opts = {}) {
    CorrespondenceSet c = covisible(rec_i, rec_j);
    if (c.size() < 3)
        throw NumericError("communities " + std::to_string(rec_i.community) + " and " +
                           std::to_string(rec_j.community) + " share " + std::to_string(c.size()) +
                           " tracks; need at least 3");
    const RansacResult fit = ransac_similarity(std::move(c), opts);
    PairwiseSimilarityMeasurement m;
    m.i = rec_i.community;
    m.j = rec_j.community;
    m.s_ij = fit.transform.s;
    m.r_ij = fit.transform.r;
    m.inlier_count = static_cast<int>(fit.inliers.size());
    m.inlier_tracks = fit.inliers;
    return m;
}

/// Copy of `rec` with every point mapped to s * R * X. Cameras are left as is.
inline Reconstruction scale_rotate_points(const Reconstruction& rec, double s, const Rotation& r) {
    Reconstruction out = rec;
    for (auto& p : out.points) p.position = s * (r * p.position);
    return out;
}

/// Translation between two reconstructions already brought to global scale
/// and orientation: component-wise median of X_i - X_j over shared tracks,
/// which estimates T_j - T_i.
inline Vec3 recompute_translation(const Reconstruction& rec_i_transformed, const Reconstruction& rec_j_transformed) {
    const CorrespondenceSet c = covisible(rec_i_transformed, rec_j_transformed);
    if (c.empty())
        throw NumericError("communities " + std::to_string(rec_i_transformed.community) + " and " +
                           std::to_string(rec_j_transformed.community) + " have no co-visible tracks");
    std::vector<Vec3> diff;
    diff.reserve(c.size());
    for (const auto& k : c) diff.push_back(k.a - k.b);
    return detail::componentwise_median(diff);
}

}  // namespace csfm

#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "csfm/geometry.hpp"

namespace csfm {

using CameraId = std::int64_t;

/// Camera pose in a reconstruction frame. `rotation` maps world to camera
/// coordinates; `center` is the optical center in world coordinates.
struct CameraPose {
    CameraId id = 0;
    Rotation rotation;
    Vec3 center = Vec3::Zero();
};

struct ScenePoint {
    TrackId track = 0;
    Vec3 position = Vec3::Zero();
};

/// Output of one community's reconstruction, in that community's own frame.
/// Points are kept sorted by track id.
struct Reconstruction {
    int community = 0;
    std::vector<CameraPose> cameras;
    std::vector<ScenePoint> points;

    void sort_points() {
        std::sort(points.begin(), points.end(), [](const auto& l, const auto& r) { return l.track < r.track; });
    }

    void validate() const {
        std::set<CameraId> cams;
        for (const auto& c : cameras)
            if (!cams.insert(c.id).second)
                throw ValidationError("reconstruction " + std::to_string(community) + ": duplicate camera " +
                                      std::to_string(c.id));
        for (std::size_t k = 1; k < points.size(); ++k) {
            if (points[k].track == points[k - 1].track)
                throw ValidationError("reconstruction " + std::to_string(community) + ": duplicate track " +
                                      std::to_string(points[k].track));
            if (points[k].track < points[k - 1].track)
                throw ValidationError("reconstruction " + std::to_string(community) + ": points not sorted by track");
        }
    }
};

/// Tracks reconstructed by both a and b, joined on track id (ascending).
/// `a` positions come from rec_a, `b` positions from rec_b.
inline CorrespondenceSet covisible(const Reconstruction& rec_a, const Reconstruction& rec_b) {
    CorrespondenceSet out;
    auto ia = rec_a.points.begin();
    auto ib = rec_b.points.begin();
    while (ia != rec_a.points.end() && ib != rec_b.points.end()) {
        if (ia->track < ib->track) {
            ++ia;
        } else if (ib->track < ia->track) {
            ++ib;
        } else {
            out.push_back({ia->track, ia->position, ib->position});
            ++ia;
            ++ib;
        }
    }
    return out;
}

}  // namespace csfm

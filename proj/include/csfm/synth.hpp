#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "csfm/community.hpp"
#include "csfm/eg_graph.hpp"
#include "csfm/errors.hpp"
#include "csfm/geometry.hpp"
#include "csfm/parallel.hpp"
#include "csfm/reconstruction.hpp"

namespace csfm {

/// Parameters of a synthetic world. Lengths are in scene units.
///
/// Cluster centers sit on a ring with `cluster_separation` between
/// neighbours. Each cluster has cluster points inside a ball of radius
/// `cluster_spread` and cameras on a shell of 1.5 to 2 spreads around it.
/// Every pair of neighbouring clusters shares a backbone of points near the
/// midpoint between them. A camera sees every point within
/// `visibility_radius`; two cameras are linked in the EG when they see at
/// least `min_shared_tracks` common points.
struct WorldSpec {
    int camera_count = 200;
    int point_count = 5000;
    int cluster_count = 4;
    double cluster_spread = 1.0;
    double cluster_separation = 8.0;
    double visibility_radius = 3.2;
    double backbone_fraction = 0.05;  // share of points placed on inter-cluster backbones
    double backbone_spread = 0.75;
    int min_shared_tracks = 15;
    double noise_sigma = 0.0;
    double outlier_fraction = 0.0;
    double outlier_displacement = 1.0;  // half-width of the uniform corruption cube
    bool randomize_frames = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (camera_count <= 0 || point_count <= 0 || cluster_count <= 0)
            throw ValidationError("world spec: counts must be positive");
        if (camera_count < cluster_count) throw ValidationError("world spec: fewer cameras than clusters");
        if (!(outlier_fraction >= 0.0 && outlier_fraction < 0.5))
            throw ValidationError("world spec: outlier fraction must lie in [0, 0.5)");
        if (!(backbone_fraction >= 0.0 && backbone_fraction < 1.0))
            throw ValidationError("world spec: backbone fraction must lie in [0, 1)");
        if (!(noise_sigma >= 0.0)) throw ValidationError("world spec: negative noise sigma");
        if (!(cluster_spread > 0.0) || !(cluster_separation > 0.0) || !(visibility_radius > 0.0))
            throw ValidationError("world spec: lengths must be positive");
        if (min_shared_tracks <= 0) throw ValidationError("world spec: min_shared_tracks must be positive");
    }
};

struct GroundTruthWorld {
    WorldSpec spec;
    std::vector<CameraPose> cameras;  // global frame; id = index
    std::vector<ScenePoint> points;   // global frame; track = index
    std::vector<std::vector<TrackId>> visibility;  // per camera, ascending
    EpipolarGraph graph;
    Partition planted;                // cluster label per camera
    std::vector<Sim3> planted_frames; // local -> global similarity per planted community
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

inline Vec3 uniform_in_ball(std::mt19937_64& rng, double radius) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    while (true) {
        const Vec3 v(u(rng), u(rng), u(rng));
        if (v.squaredNorm() <= 1.0) return radius * v;
    }
}

inline Vec3 unit_vector(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    while (true) {
        const Vec3 v(n(rng), n(rng), n(rng));
        const double len = v.norm();
        if (len > 1e-9) return v / len;
    }
}

inline Rotation random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Rotation(n(rng), n(rng), n(rng), n(rng));
}

inline std::size_t shared_count(const std::vector<TrackId>& a, const std::vector<TrackId>& b) {
    std::size_t count = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++count;
            ++ia;
            ++ib;
        }
    }
    return count;
}

}  // namespace detail

/// Local-to-global similarity of community k: random scale in [0.5, 2],
/// uniform random rotation and translation in [-10, 10]^3, or the identity
/// when frames are not randomized. Deterministic in (seed, k).
inline Sim3 planted_frame(const WorldSpec& spec, int k) {
    if (!spec.randomize_frames) return Sim3::identity();
    auto rng = detail::stream(spec.seed, 0xF4A3E, static_cast<std::uint64_t>(k));
    std::uniform_real_distribution<double> log_scale(std::log(0.5), std::log(2.0));
    std::uniform_real_distribution<double> offset(-10.0, 10.0);
    Sim3 x;
    x.s = std::exp(log_scale(rng));
    x.r = detail::random_rotation(rng);
    x.t = Vec3(offset(rng), offset(rng), offset(rng));
    return x;
}

inline GroundTruthWorld generate_world(const WorldSpec& spec) {
    spec.validate();
    GroundTruthWorld world;
    world.spec = spec;
    const int clusters = spec.cluster_count;

    std::vector<Vec3> centers(clusters, Vec3::Zero());
    if (clusters > 1) {
        const double ring = spec.cluster_separation / (2.0 * std::sin(std::numbers::pi / clusters));
        for (int k = 0; k < clusters; ++k) {
            const double angle = 2.0 * std::numbers::pi * k / clusters;
            centers[k] = Vec3(ring * std::cos(angle), ring * std::sin(angle), 0.0);
        }
    }
    // neighbouring cluster pairs along the ring; two clusters share one link
    std::vector<std::pair<int, int>> links;
    for (int k = 0; k < clusters && clusters > 1; ++k) {
        const int next = (k + 1) % clusters;
        if (clusters == 2 && k == 1) break;
        links.emplace_back(k, next);
    }

    auto rng = detail::stream(spec.seed, 0x5CE4E);
    std::uniform_real_distribution<double> shell(1.5, 2.0);
    std::vector<int> labels;
    for (int c = 0; c < spec.camera_count; ++c) {
        const int k = static_cast<int>(static_cast<long long>(c) * clusters / spec.camera_count);
        CameraPose cam;
        cam.id = c;
        cam.center = centers[k] + shell(rng) * spec.cluster_spread * detail::unit_vector(rng);
        cam.rotation = detail::random_rotation(rng);
        world.cameras.push_back(cam);
        labels.push_back(k);
    }

    const int backbone_total = links.empty() ? 0 : static_cast<int>(spec.backbone_fraction * spec.point_count);
    const int regular = spec.point_count - backbone_total;
    for (int p = 0; p < regular; ++p) {
        const int k = static_cast<int>(static_cast<long long>(p) * clusters / regular);
        world.points.push_back({static_cast<TrackId>(world.points.size()),
                                centers[k] + detail::uniform_in_ball(rng, spec.cluster_spread)});
    }
    for (int p = 0; p < backbone_total; ++p) {
        const auto& [a, b] = links[static_cast<std::size_t>(static_cast<long long>(p) * links.size() / backbone_total)];
        const Vec3 mid = 0.5 * (centers[a] + centers[b]);
        world.points.push_back({static_cast<TrackId>(world.points.size()),
                                mid + detail::uniform_in_ball(rng, spec.backbone_spread)});
    }

    const double r2 = spec.visibility_radius * spec.visibility_radius;
    world.visibility.assign(world.cameras.size(), {});
    for (std::size_t c = 0; c < world.cameras.size(); ++c)
        for (const auto& p : world.points)
            if ((p.position - world.cameras[c].center).squaredNorm() < r2) world.visibility[c].push_back(p.track);

    std::vector<Edge> edges;
    std::vector<std::string> names;
    for (std::size_t a = 0; a < world.cameras.size(); ++a) {
        names.push_back("img_" + std::string(4 - std::min<std::size_t>(4, std::to_string(a).size()), '0') +
                        std::to_string(a));
        for (std::size_t b = a + 1; b < world.cameras.size(); ++b) {
            const std::size_t shared = detail::shared_count(world.visibility[a], world.visibility[b]);
            if (shared >= static_cast<std::size_t>(spec.min_shared_tracks))
                edges.push_back({static_cast<int>(a), static_cast<int>(b), static_cast<int>(shared)});
        }
    }
    world.graph = EpipolarGraph(std::move(names), std::move(edges));
    world.planted = Partition(labels);
    for (int k = 0; k < clusters; ++k) world.planted_frames.push_back(planted_frame(spec, k));

    for (const auto& members : world.planted.communities()) {
        if (connected_components(induced_subgraph(world.graph, members).graph).size() != 1)
            throw DisconnectedError("synthetic world: a planted cluster is not connected in the EG; "
                                    "increase visibility_radius");
    }
    const CommunityGraph cg = build_community_graph(world.graph, world.planted);
    {
        std::vector<int> parent(clusters);
        for (int k = 0; k < clusters; ++k) parent[k] = k;
        auto find = [&](int v) {
            while (parent[v] != v) v = parent[v] = parent[parent[v]];
            return v;
        };
        int groups = clusters;
        for (const auto& [key, count] : cg.cross_edges) {
            const int a = find(key.first), b = find(key.second);
            if (a != b) parent[b] = a, --groups;
        }
        if (groups != 1)
            throw DisconnectedError("synthetic world: community graph is disconnected; increase visibility_radius "
                                    "or backbone size");
    }
    return world;
}

struct FracturedWorld {
    std::vector<Reconstruction> recs;                 // one per community, in community order
    std::vector<Sim3> frames;                         // local -> global similarity used per community
    std::vector<std::vector<TrackId>> corrupted;      // corrupted shared tracks per community, ascending
};

/// Cuts the world along `partition` and expresses each community in its own
/// frame: the inverse of world.planted_frames[k] (planted_frame(spec, k) past
/// the planted count) is applied to cameras and visible points, Gaussian noise of noise_sigma scene units is added to
/// point positions and camera centers, and floor(outlier_fraction x shared)
/// of the tracks shared with other communities are displaced uniformly.
inline FracturedWorld fracture(const GroundTruthWorld& world, const Partition& partition, int workers = 1) {
    if (partition.node_count() != static_cast<int>(world.cameras.size()))
        throw ValidationError("fracture: partition does not cover the world cameras");
    const WorldSpec& spec = world.spec;
    const auto groups = partition.communities();
    const int n = partition.community_count();

    std::vector<std::vector<TrackId>> tracks(n);
    std::map<TrackId, int> owners;
    for (int k = 0; k < n; ++k) {
        std::set<TrackId> seen;
        for (NodeIndex c : groups[k]) seen.insert(world.visibility[c].begin(), world.visibility[c].end());
        tracks[k].assign(seen.begin(), seen.end());
        for (TrackId t : tracks[k]) owners[t] += 1;
    }

    struct Piece {
        Reconstruction rec;
        Sim3 frame;
        std::vector<TrackId> corrupted;
    };
    auto pieces = parallel_map(static_cast<std::size_t>(n), workers, [&](std::size_t idx) {
        const int k = static_cast<int>(idx);
        Piece out;
        out.frame = idx < world.planted_frames.size() ? world.planted_frames[idx] : planted_frame(spec, k);
        const Sim3 to_local = inverse(out.frame);
        auto rng = detail::stream(spec.seed, 0xF7AC7, idx);
        std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma / out.frame.s : 1.0);
        auto jitter = [&] {
            if (spec.noise_sigma == 0.0) return Vec3(Vec3::Zero());
            return Vec3(noise(rng), noise(rng), noise(rng));
        };
        out.rec.community = k;
        for (NodeIndex c : groups[k]) {
            const CameraPose& g = world.cameras[c];
            out.rec.cameras.push_back({g.id, g.rotation * out.frame.r, Vec3(to_local(g.center) + jitter())});
        }
        for (TrackId t : tracks[k])
            out.rec.points.push_back({t, Vec3(to_local(world.points[t].position) + jitter())});

        std::vector<std::size_t> shared;
        for (std::size_t p = 0; p < out.rec.points.size(); ++p)
            if (owners.at(out.rec.points[p].track) > 1) shared.push_back(p);
        const auto corrupt = static_cast<std::size_t>(std::floor(spec.outlier_fraction * shared.size()));
        std::shuffle(shared.begin(), shared.end(), rng);
        std::uniform_real_distribution<double> offset(-spec.outlier_displacement / out.frame.s,
                                                      spec.outlier_displacement / out.frame.s);
        for (std::size_t q = 0; q < corrupt; ++q) {
            ScenePoint& p = out.rec.points[shared[q]];
            p.position += Vec3(offset(rng), offset(rng), offset(rng));
            out.corrupted.push_back(p.track);
        }
        std::sort(out.corrupted.begin(), out.corrupted.end());
        return out;
    });

    FracturedWorld out;
    for (auto& p : pieces) {
        out.recs.push_back(std::move(p.rec));
        out.frames.push_back(p.frame);
        out.corrupted.push_back(std::move(p.corrupted));
    }
    return out;
}

}  // namespace csfm

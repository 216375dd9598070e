#include <random>
#include <set>

#include <gtest/gtest.h>

#include "csfm/io.hpp"
#include "csfm/synth.hpp"
#include "oracles.hpp"

using namespace csfm;

namespace {

WorldSpec small_spec(int clusters, std::uint64_t seed) {
    WorldSpec s;
    s.camera_count = 20 * clusters;
    s.point_count = 600 * clusters;
    s.cluster_count = clusters;
    s.seed = seed;
    return s;
}

// shared track count between two camera visibility lists
int shared(const std::vector<TrackId>& a, const std::vector<TrackId>& b) {
    std::set<TrackId> sa(a.begin(), a.end());
    int n = 0;
    for (TrackId t : b) n += static_cast<int>(sa.count(t));
    return n;
}

}  // namespace

TEST(WorldSpec, Validation) {
    auto bad = [](auto mutate) {
        WorldSpec s;
        mutate(s);
        return s;
    };
    EXPECT_THROW(bad([](WorldSpec& s) { s.camera_count = 0; }).validate(), ValidationError);
    EXPECT_THROW(bad([](WorldSpec& s) { s.point_count = -1; }).validate(), ValidationError);
    EXPECT_THROW(bad([](WorldSpec& s) { s.outlier_fraction = 0.5; }).validate(), ValidationError);
    EXPECT_THROW(bad([](WorldSpec& s) { s.noise_sigma = -1e-3; }).validate(), ValidationError);
    EXPECT_THROW(bad([](WorldSpec& s) { s.min_shared_tracks = 0; }).validate(), ValidationError);
    EXPECT_THROW(bad([](WorldSpec& s) { s.camera_count = 3; }).validate(), ValidationError);
    EXPECT_NO_THROW(WorldSpec{}.validate());
}

TEST(GenerateWorld, SameSeedIsBitIdentical) {
    const GroundTruthWorld a = generate_world(small_spec(3, 11));
    const GroundTruthWorld b = generate_world(small_spec(3, 11));
    EXPECT_EQ(io::world_to_json(a).dump(), io::world_to_json(b).dump());
    const GroundTruthWorld c = generate_world(small_spec(3, 12));
    EXPECT_NE(io::world_to_json(a).dump(), io::world_to_json(c).dump());
}

TEST(GenerateWorld, EdgesMatchSharedVisibility) {
    const GroundTruthWorld w = generate_world(small_spec(3, 13));
    std::set<std::pair<int, int>> edges;
    for (const auto& e : w.graph.edges()) edges.insert({std::min(e.i, e.j), std::max(e.i, e.j)});
    const int n = static_cast<int>(w.cameras.size());
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            const int k = shared(w.visibility[a], w.visibility[b]);
            EXPECT_EQ(edges.count({a, b}) == 1, k >= w.spec.min_shared_tracks) << a << "," << b;
        }
    // visibility really is the distance rule
    for (int c = 0; c < n; ++c)
        for (TrackId t : w.visibility[c])
            EXPECT_LT((w.points[t].position - w.cameras[c].center).norm(), w.spec.visibility_radius);
}

TEST(GenerateWorld, PlantedClustersConnected) {
    const GroundTruthWorld w = generate_world(small_spec(4, 14));
    EXPECT_EQ(w.planted.community_count(), 4);
    for (const auto& members : w.planted.communities())
        EXPECT_EQ(connected_components(induced_subgraph(w.graph, members).graph).size(), 1u);
    EXPECT_EQ(w.planted_frames.size(), 4u);
}

TEST(GenerateWorld, SingleClusterHasNoSignificantStructure) {
    const GroundTruthWorld w = generate_world(small_spec(1, 15));
    const Detection d = detect_communities(w.graph, 0.3);
    EXPECT_LE(d.q_max, 0.3);
    EXPECT_EQ(d.partition.community_count(), 1);
}

TEST(GenerateWorld, ThreeSeparatedClustersRecoveredExactly) {
    for (std::uint64_t seed : {16u, 17u, 18u}) {
        const GroundTruthWorld w = generate_world(small_spec(3, seed));
        const Partition p = recursive_partition(w.graph, 0.3);
        ASSERT_EQ(p.community_count(), 3);
        // same blocks up to relabeling
        EXPECT_EQ(p.communities(), w.planted.communities());
    }
}

TEST(GenerateWorld, TooSmallRadiusIsDisconnected) {
    WorldSpec s = small_spec(3, 19);
    s.visibility_radius = 0.4;
    EXPECT_THROW(generate_world(s), DisconnectedError);
}

TEST(Fracture, IdentityFramesZeroNoiseGiveWorldSlices) {
    WorldSpec s = small_spec(3, 20);
    s.randomize_frames = false;
    const GroundTruthWorld w = generate_world(s);
    const FracturedWorld f = fracture(w, w.planted);
    ASSERT_EQ(f.recs.size(), 3u);
    const auto groups = w.planted.communities();
    for (int k = 0; k < 3; ++k) {
        const Reconstruction& r = f.recs[k];
        EXPECT_EQ(r.community, k);
        ASSERT_EQ(r.cameras.size(), groups[k].size());
        std::set<TrackId> seen;
        for (std::size_t c = 0; c < groups[k].size(); ++c) {
            const CameraPose& g = w.cameras[groups[k][c]];
            EXPECT_EQ(r.cameras[c].id, g.id);
            EXPECT_EQ(r.cameras[c].center, g.center);
            EXPECT_LT((r.cameras[c].rotation.matrix() - g.rotation.matrix()).norm(), 1e-14);
            seen.insert(w.visibility[groups[k][c]].begin(), w.visibility[groups[k][c]].end());
        }
        ASSERT_EQ(r.points.size(), seen.size());
        for (const auto& p : r.points) {
            EXPECT_TRUE(seen.count(p.track));
            EXPECT_EQ(p.position, w.points[p.track].position);
        }
        EXPECT_TRUE(f.corrupted[k].empty());
    }
}

TEST(Fracture, PlantedScaleTwoHalvesDistances) {
    GroundTruthWorld w = generate_world(small_spec(3, 21));
    w.planted_frames[1] = Sim3{2.0, Rotation::about(Vec3(1, 2, 3).normalized(), 0.7), Vec3(5, -3, 1)};
    const FracturedWorld f = fracture(w, w.planted);
    const Reconstruction& r = f.recs[1];
    ASSERT_GE(r.points.size(), 10u);
    for (std::size_t a = 0; a + 1 < r.points.size(); a += 7) {
        const std::size_t b = (a * 13 + 5) % r.points.size();
        if (a == b) continue;
        const double local = (r.points[a].position - r.points[b].position).norm();
        const double global = (w.points[r.points[a].track].position - w.points[r.points[b].track].position).norm();
        EXPECT_NEAR(local / global, 0.5, 1e-12);
    }
}

TEST(Fracture, LocalFramesMapBackThroughPlantedSimilarity) {
    const GroundTruthWorld w = generate_world(small_spec(3, 22));
    const FracturedWorld f = fracture(w, w.planted);
    for (int k = 0; k < 3; ++k) {
        const Sim3& x = f.frames[k];
        EXPECT_EQ(x.s, w.planted_frames[k].s);
        for (const auto& p : f.recs[k].points)
            EXPECT_LT((x(p.position) - w.points[p.track].position).norm(), 1e-9);
        for (const auto& c : f.recs[k].cameras) {
            EXPECT_LT((x(c.center) - w.cameras[c.id].center).norm(), 1e-9);
            // local world-to-camera rotation is R^g R_k
            EXPECT_LT(oracle::angle_between(c.rotation.matrix(), (w.cameras[c.id].rotation * x.r).matrix()), 1e-12);
        }
    }
}

TEST(Fracture, CorruptsExactlyTheRequestedFractionOfSharedTracks) {
    WorldSpec s = small_spec(4, 23);
    s.outlier_fraction = 0.2;
    s.outlier_displacement = 0.5;
    const GroundTruthWorld w = generate_world(s);
    const FracturedWorld f = fracture(w, w.planted);
    std::map<TrackId, int> owners;
    for (const auto& r : f.recs)
        for (const auto& p : r.points) owners[p.track] += 1;
    for (int k = 0; k < 4; ++k) {
        std::size_t shared_tracks = 0;
        std::set<TrackId> moved;
        for (const auto& p : f.recs[k].points) {
            if (owners[p.track] > 1) ++shared_tracks;
            const Vec3 back = f.frames[k](p.position);
            if ((back - w.points[p.track].position).norm() > 1e-9) moved.insert(p.track);
        }
        EXPECT_EQ(f.corrupted[k].size(), static_cast<std::size_t>(std::floor(0.2 * shared_tracks)));
        EXPECT_EQ(std::set<TrackId>(f.corrupted[k].begin(), f.corrupted[k].end()), moved);
        EXPECT_TRUE(std::is_sorted(f.corrupted[k].begin(), f.corrupted[k].end()));
        for (TrackId t : f.corrupted[k]) EXPECT_GT(owners[t], 1);
    }
}

TEST(Fracture, NoiseHasRequestedSigma) {
    WorldSpec s = small_spec(2, 24);
    s.noise_sigma = 0.01;
    const GroundTruthWorld w = generate_world(s);
    const FracturedWorld f = fracture(w, w.planted);
    double sum2 = 0.0;
    int n = 0;
    for (int k = 0; k < 2; ++k)
        for (const auto& p : f.recs[k].points) {
            sum2 += (f.frames[k](p.position) - w.points[p.track].position).squaredNorm();
            n += 3;
        }
    EXPECT_NEAR(std::sqrt(sum2 / n), 0.01, 0.0005);
}

TEST(Fracture, WorkerCountDoesNotChangeOutput) {
    WorldSpec s = small_spec(4, 25);
    s.noise_sigma = 1e-3;
    s.outlier_fraction = 0.2;
    const GroundTruthWorld w = generate_world(s);
    const FracturedWorld a = fracture(w, w.planted, 1);
    const FracturedWorld b = fracture(w, w.planted, 4);
    for (int k = 0; k < 4; ++k)
        EXPECT_EQ(io::reconstruction_to_json(a.recs[k]).dump(), io::reconstruction_to_json(b.recs[k]).dump());
}

TEST(Fracture, PartitionMustCoverCameras) {
    const GroundTruthWorld w = generate_world(small_spec(2, 26));
    EXPECT_THROW(fracture(w, Partition::single(3)), ValidationError);
}

TEST(Covisible, PlantedSharedTracks) {
    Reconstruction a, b;
    for (TrackId t = 0; t < 100; ++t) a.points.push_back({t, Vec3(t, 0, 0)});
    for (TrackId t = 60; t < 200; ++t) b.points.push_back({t, Vec3(0, t, 0)});
    const CorrespondenceSet c = covisible(a, b);
    ASSERT_EQ(c.size(), 40u);
    for (std::size_t k = 0; k < c.size(); ++k) EXPECT_EQ(c[k].track, static_cast<TrackId>(60 + k));
}

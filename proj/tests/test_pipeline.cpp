#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "csfm/pipeline.hpp"
#include "oracles.hpp"

using namespace csfm;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() /
                ("csfm_pipe_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& s) const { return path_ / s; }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// every file below `root` except timing.json, by relative path
std::map<std::string, std::string> artifacts(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() != "timing.json")
            out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

// names of files that differ or exist on one side only; keeps failure output small
std::vector<std::string> differing(const std::map<std::string, std::string>& a,
                                   const std::map<std::string, std::string>& b) {
    std::vector<std::string> out;
    for (const auto& [name, body] : a)
        if (!b.count(name) || b.at(name) != body) out.push_back(name);
    for (const auto& [name, body] : b)
        if (!a.count(name)) out.push_back(name);
    return out;
}

bool same_file(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

WorldSpec spec(int clusters, std::uint64_t seed) {
    WorldSpec s;
    s.camera_count = 40 * clusters;
    s.point_count = 1000 * clusters;
    s.cluster_count = clusters;
    s.seed = seed;
    return s;
}

PipelineConfig synthetic(const WorldSpec& s, const fs::path& out) {
    PipelineConfig cfg;
    cfg.world = s;
    cfg.ransac.seed = s.seed;
    cfg.out_dir = out;
    return cfg;
}

}  // namespace

TEST(Pipeline, ThreeCommunityWorldWithinFiveSigma) {
    TempDir dir;
    WorldSpec s = spec(3, 80);
    s.noise_sigma = 1e-3;
    const PipelineResult r = run_pipeline(synthetic(s, dir.path()));
    ASSERT_TRUE(r.evaluation.has_value());
    EXPECT_EQ(r.report["detection"]["communities"], 3);
    EXPECT_TRUE(r.report["detection"]["significant"].get<bool>());
    EXPECT_LT(r.evaluation->median_center_error, 5.0 * s.noise_sigma);
    ASSERT_TRUE(r.evaluation_refined.has_value());
    EXPECT_LT(r.evaluation_refined->median_center_error, 5.0 * s.noise_sigma);
    for (const char* f : {"world.json", "eg.json", "truth-labels.json", "partition.json", "recs/rec_0.json",
                          "measurements.json", "transforms.json", "merged.json", "merged_refined.json", "eval.json",
                          "report.json", "timing.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto timing = io::read_json(dir / "timing.json");
    for (const char* stage : {"synth", "detect", "fracture", "pairwise", "average", "merge", "refine", "eval"})
        EXPECT_TRUE(timing.contains(stage)) << stage;
}

TEST(Pipeline, IdentityFramesZeroNoiseReproduceCameraCenters) {
    for (bool randomize : {false, true}) {
        TempDir dir;
        WorldSpec s = spec(4, 81);
        s.randomize_frames = randomize;
        const PipelineResult r = run_pipeline(synthetic(s, dir.path()));
        EXPECT_LT(r.evaluation->rmse_center_error, 1e-8);
        EXPECT_LT(r.evaluation->median_rotation_error, 1e-8);
        EXPECT_LT(r.evaluation_refined->rmse_center_error, 1e-8);
    }
}

TEST(Pipeline, SingleCommunityPassesThrough) {
    TempDir dir;
    PipelineConfig cfg = synthetic(spec(1, 82), dir.path());
    const PipelineResult r = run_pipeline(cfg);
    EXPECT_FALSE(r.report["detection"]["significant"].get<bool>());
    EXPECT_EQ(r.report["detection"]["communities"], 1);
    EXPECT_EQ(r.report["pairwise"]["pairs"], 0);
    EXPECT_TRUE(r.report["refine"]["skipped"].get<bool>());
    const auto xs = io::transforms_from_json(io::read_json(dir / "transforms.json"));
    ASSERT_EQ(xs.size(), 1u);
    EXPECT_EQ(xs[0].transform.s, 1.0);
    EXPECT_EQ(xs[0].transform.t, Vec3::Zero());
    // merged model is the single reconstruction unchanged
    const MergedModel m = io::merged_from_json(io::read_json(dir / "merged.json"));
    const Reconstruction rec = io::read_reconstructions(dir / "recs")[0];
    ASSERT_EQ(m.points.size(), rec.points.size());
    for (std::size_t k = 0; k < m.points.size(); ++k) EXPECT_EQ(m.points[k].position, rec.points[k].position);
}

TEST(Pipeline, RunsAreByteIdenticalAcrossRunsAndWorkerCounts) {
    TempDir a, b, c;
    WorldSpec s = spec(4, 83);
    s.noise_sigma = 1e-3;
    s.outlier_fraction = 0.2;
    run_pipeline(synthetic(s, a.path()));
    run_pipeline(synthetic(s, b.path()));
    PipelineConfig cfg = synthetic(s, c.path());
    cfg.workers = 3;
    run_pipeline(cfg);
    const auto first = artifacts(a.path());
    EXPECT_GE(first.size(), 14u);
    EXPECT_EQ(differing(first, artifacts(b.path())), std::vector<std::string>{});
    EXPECT_EQ(differing(first, artifacts(c.path())), std::vector<std::string>{});
}

TEST(Pipeline, RerunFromDiskMatchesInMemoryRun) {
    TempDir dir, again;
    WorldSpec s = spec(3, 84);
    s.noise_sigma = 1e-3;
    s.outlier_fraction = 0.2;
    run_pipeline(synthetic(s, dir.path()));
    PipelineConfig cfg;
    cfg.graph_path = dir / "eg.json";
    cfg.partition_path = dir / "partition.json";
    cfg.recs_dir = dir / "recs";
    cfg.ransac.seed = s.seed;
    cfg.out_dir = again.path();
    run_pipeline(cfg);
    for (const char* f : {"measurements.json", "transforms.json", "merged.json", "transforms_refined.json"})
        EXPECT_TRUE(same_file(dir / f, again / f)) << f;
}

TEST(Pipeline, AnswerIsGaugeInvariant) {
    // same world fractured in two different sets of local frames
    const WorldSpec s = spec(3, 85);
    GroundTruthWorld world = generate_world(s);
    std::vector<EvaluationReport> reports;
    std::mt19937_64 rng(86);
    for (int run = 0; run < 2; ++run) {
        TempDir dir;
        if (run == 1)
            for (auto& f : world.planted_frames)
                f = Sim3{0.3 + 2.0 * (rng() % 1000) / 1000.0, Rotation::from_matrix(oracle::random_rotation_matrix(rng)),
                         Vec3(-7, 3, 11)};
        const FracturedWorld fw = fracture(world, world.planted);
        io::write_reconstructions(dir / "recs", fw.recs);
        io::write_json(dir / "eg.json", graph_to_json(world.graph));
        io::write_json(dir / "partition.json", io::partition_to_json(world.planted, 0.0, {}));
        PipelineConfig cfg;
        cfg.graph_path = dir / "eg.json";
        cfg.partition_path = dir / "partition.json";
        cfg.recs_dir = dir / "recs";
        cfg.out_dir = dir / "out";
        run_pipeline(cfg);
        reports.push_back(
            evaluate_against_truth(io::merged_from_json(io::read_json(dir / "out" / "merged.json")), world.cameras, world.points));
    }
    EXPECT_LT(reports[0].rmse_center_error, 1e-8);
    EXPECT_LT(reports[1].rmse_center_error, 1e-8);
    EXPECT_LT(reports[1].point_rmse, 1e-8);
}

TEST(Pipeline, DroppedPairDisconnectsAveraging) {
    TempDir dir;
    const GroundTruthWorld world = generate_world(spec(2, 87));
    FracturedWorld fw = fracture(world, world.planted);
    // leave only two co-visible tracks between the two communities
    const CorrespondenceSet shared = covisible(fw.recs[0], fw.recs[1]);
    ASSERT_GT(shared.size(), 3u);
    std::set<TrackId> drop;
    for (std::size_t k = 2; k < shared.size(); ++k) drop.insert(shared[k].track);
    std::erase_if(fw.recs[1].points, [&](const ScenePoint& p) { return drop.count(p.track) > 0; });
    io::write_reconstructions(dir / "recs", fw.recs);
    io::write_json(dir / "eg.json", graph_to_json(world.graph));
    io::write_json(dir / "partition.json", io::partition_to_json(world.planted, 0.0, {}));
    PipelineConfig cfg;
    cfg.graph_path = dir / "eg.json";
    cfg.partition_path = dir / "partition.json";
    cfg.recs_dir = dir / "recs";
    cfg.out_dir = dir / "out";
    try {
        run_pipeline(cfg);
        FAIL() << "expected the averaging stage to fail";
    } catch (const Error& ex) {
        EXPECT_EQ(ex.exit_code(), 4);
        const std::string what = ex.what();
        EXPECT_NE(what.find("stage 'average'"), std::string::npos) << what;
        EXPECT_NE(what.find("measurements.json"), std::string::npos) << what;
    }
}

TEST(Pipeline, StageErrorsKeepExitCode) {
    TempDir dir;
    PipelineConfig cfg;
    cfg.graph_path = dir / "missing.json";
    cfg.out_dir = dir / "out";
    try {
        run_pipeline(cfg);
        FAIL();
    } catch (const Error& ex) {
        EXPECT_EQ(ex.exit_code(), 2);
        EXPECT_NE(std::string(ex.what()).find("stage 'load'"), std::string::npos);
    }
    WorldSpec bad = spec(3, 88);
    bad.visibility_radius = 0.3;
    try {
        run_pipeline(synthetic(bad, dir / "out2"));
        FAIL();
    } catch (const Error& ex) {
        EXPECT_EQ(ex.exit_code(), 4);
        EXPECT_NE(std::string(ex.what()).find("stage 'synth'"), std::string::npos);
    }
}

TEST(PairSeed, DependsOnSeedAndPair) {
    EXPECT_EQ(pair_seed(1, 0, 1), pair_seed(1, 0, 1));
    EXPECT_NE(pair_seed(1, 0, 1), pair_seed(2, 0, 1));
    EXPECT_NE(pair_seed(1, 0, 1), pair_seed(1, 1, 0));
    EXPECT_NE(pair_seed(1, 0, 2), pair_seed(1, 0, 1));
}

#ifdef CSFM_CLI
namespace {
int cli(const std::string& args) {
    const std::string cmd = std::string(CSFM_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST(Cli, ExitCodes) {
    TempDir dir;
    io::write_json(dir / "spec.json", io::world_spec_to_json(spec(2, 0)));
    EXPECT_EQ(cli("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "w").string()), 2);  // no seed
    EXPECT_EQ(cli("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "w").string() + " --seed 3"), 0);
    EXPECT_TRUE(fs::exists(dir / "w" / "rec_1.json"));
    EXPECT_EQ(cli("detect --graph " + (dir / "nope.json").string() + " -o " + (dir / "p.json").string()), 2);
    EXPECT_EQ(cli("detect --graph " + (dir / "w" / "eg.json").string() + " -o " + (dir / "p.json").string()), 0);
    io::write_text(dir / "bad.json", "{\"camera_count\": ");
    EXPECT_EQ(cli("pipeline --spec " + (dir / "bad.json").string() + " --seed 1 --out " + (dir / "o").string()), 2);
    io::write_json(dir / "tiny.json", nlohmann::json{{"cluster_count", 3}, {"visibility_radius", 0.3}});
    EXPECT_EQ(cli("pipeline --spec " + (dir / "tiny.json").string() + " --seed 1 --out " + (dir / "o").string()), 4);
    EXPECT_EQ(cli("frobnicate"), 2);
}

TEST(Cli, StagewiseRunMatchesPipeline) {
    TempDir dir;
    const auto d = [&](const std::string& s) { return (dir / s).string(); };
    io::write_json(dir / "spec.json", nlohmann::json{{"camera_count", 120}, {"point_count", 3000}, {"cluster_count", 3},
                                                     {"noise_sigma", 0.001}, {"outlier_fraction", 0.2}});
    ASSERT_EQ(cli("pipeline --spec " + d("spec.json") + " --seed 5 --out " + d("full")), 0);
    ASSERT_EQ(cli("pairwise --recs " + d("full/recs") + " --graph " + d("full/eg.json") + " --partition " +
                  d("full/partition.json") + " --seed 5 -o " + d("m.json")),
              0);
    ASSERT_EQ(cli("average --measurements " + d("m.json") + " --recs " + d("full/recs") + " -o " + d("t.json")), 0);
    ASSERT_EQ(cli("merge --recs " + d("full/recs") + " --transforms " + d("t.json") + " -o " + d("merged.json")), 0);
    EXPECT_TRUE(same_file(dir / "m.json", dir / "full" / "measurements.json"));
    EXPECT_TRUE(same_file(dir / "t.json", dir / "full" / "transforms.json"));
    EXPECT_TRUE(same_file(dir / "merged.json", dir / "full" / "merged.json"));
    ASSERT_EQ(cli("eval --model " + d("merged.json") + " --truth " + d("full/world.json") + " -o " + d("e.json")), 0);
    EXPECT_LT(io::read_json(dir / "e.json")["median_center_error"].get<double>(), 5e-3);
    ASSERT_EQ(cli("export-ply --model " + d("merged.json") + " -o " + d("m.ply") + " --color"), 0);
    EXPECT_EQ(slurp(dir / "m.ply").rfind("ply\n", 0), 0u);
}
#endif

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "csfm/averaging.hpp"
#include "csfm/community.hpp"
#include "csfm/eg_graph.hpp"
#include "csfm/errors.hpp"
#include "csfm/io.hpp"
#include "csfm/merge.hpp"
#include "csfm/pairwise.hpp"
#include "csfm/parallel.hpp"
#include "csfm/synth.hpp"

namespace csfm {

struct PipelineConfig {
    double q_threshold = 0.3;
    int min_community_size = 20;
    RansacOptions ransac{};
    AveragingOptions averaging{};
    bool refine = true;
    bool evaluate = true;
    int workers = 1;

    // Synthetic run: world generated from `world`; otherwise the stages start
    // from graph_path / partition_path / recs_dir.
    std::optional<WorldSpec> world;
    std::filesystem::path graph_path;
    std::filesystem::path partition_path;
    std::filesystem::path recs_dir;
    std::filesystem::path out_dir = "csfm_out";
};

// -- stages -----------------------------------------------------------------

struct DetectionStage {
    Partition partition;
    double q_max = 0.0;
    std::vector<CommunityId> flagged_isolated;
};

/// Recursive modularity partitioning followed by small-community absorption.
inline DetectionStage detect_stage(const EpipolarGraph& g, double q_threshold, int min_size) {
    const Detection d = detect_communities(g, q_threshold);
    Absorption a = absorb_small(g, d.partition, min_size);
    return {std::move(a.partition), d.q_max, std::move(a.flagged_isolated)};
}

/// Per-pair RANSAC seed derived from the run seed and the community pair.
inline std::uint64_t pair_seed(std::uint64_t seed, int i, int j) {
    std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ull;
    for (std::uint64_t v : {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)}) {
        h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
        h *= 0xBF58476D1CE4E5B9ull;
    }
    return h;
}

struct PairwiseStage {
    MeasurementGraph graph;
    std::vector<std::string> warnings;
};

/// Measures every listed community pair (or every pair with >= 3 co-visible
/// tracks when `pairs` is empty). Pairs that cannot be measured are dropped
/// with a warning; connectivity is checked by the averaging stage.
inline PairwiseStage pairwise_stage(const std::vector<Reconstruction>& recs, std::vector<std::pair<int, int>> pairs,
                                    const RansacOptions& ransac, int workers) {
    const int n = static_cast<int>(recs.size());
    if (pairs.empty()) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (covisible(recs[i], recs[j]).size() >= 3) pairs.emplace_back(i, j);
    }
    for (auto& [i, j] : pairs) {
        if (i > j) std::swap(i, j);
        if (i < 0 || j >= n || i == j) throw ValidationError("pairwise: invalid community pair");
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    struct Outcome {
        std::optional<PairwiseSimilarityMeasurement> m;
        std::string warning;
    };
    const auto outcomes = parallel_map(pairs.size(), workers, [&](std::size_t k) {
        const auto [i, j] = pairs[k];
        RansacOptions opts = ransac;
        opts.seed = pair_seed(ransac.seed, i, j);
        Outcome o;
        try {
            o.m = pairwise_measurement(recs[i], recs[j], opts);
        } catch (const NumericError& ex) {
            o.warning = "dropping pair (" + std::to_string(i) + "," + std::to_string(j) + "): " + ex.what();
        }
        return o;
    });
    PairwiseStage out;
    out.graph.community_count = n;
    for (const auto& o : outcomes) {
        if (o.m) out.graph.measurements.push_back(*o.m);
        else out.warnings.push_back(o.warning);
    }
    return out;
}

inline std::vector<std::pair<int, int>> community_pairs(const CommunityGraph& cg) {
    std::vector<std::pair<int, int>> pairs;
    for (const auto& [key, count] : cg.cross_edges) pairs.push_back(key);
    return pairs;
}

struct ResidualStats {
    double median = 0.0;
    double max = 0.0;
};

inline ResidualStats residual_stats(std::vector<double> v) {
    if (v.empty()) return {};
    ResidualStats s;
    s.max = *std::max_element(v.begin(), v.end());
    s.median = detail::median_inplace(v);
    return s;
}

/// Per-measurement residuals of final transforms: |log(s_i/s_j) - log s_ij|,
/// angle between r_ij and R_j^T R_i, and |T_j - T_i - t_ij|.
inline nlohmann::json averaging_residuals(const MeasurementGraph& mg, const std::vector<CommunitySimilarity>& xs) {
    std::vector<double> scale, rotation, translation;
    for (const auto& m : mg.measurements) {
        const Sim3& a = xs.at(m.i).transform;
        const Sim3& b = xs.at(m.j).transform;
        scale.push_back(std::abs(std::log(a.s / b.s) - std::log(m.s_ij)));
        rotation.push_back(angular_distance(m.r_ij, b.r.inverse() * a.r));
        if (m.t_ij) translation.push_back((b.t - a.t - *m.t_ij).norm());
    }
    auto pack = [](const ResidualStats& s) { return nlohmann::json{{"median", s.median}, {"max", s.max}}; };
    return {{"scale", pack(residual_stats(scale))},
            {"rotation_rad", pack(residual_stats(rotation))},
            {"translation", pack(residual_stats(translation))}};
}

// -- orchestration ----------------------------------------------------------

struct PipelineResult {
    std::filesystem::path out_dir;
    nlohmann::json report;   // deterministic residual statistics
    nlohmann::json timing;   // wall-clock seconds per stage
    std::optional<EvaluationReport> evaluation;
    std::optional<EvaluationReport> evaluation_refined;
    std::vector<std::string> warnings;
};

namespace detail {

class StageRunner {
public:
    StageRunner(nlohmann::json& timing, std::string& last_good) : timing_(timing), last_good_(last_good) {}

    template <typename Fn>
    auto run(const std::string& stage, const std::filesystem::path& artifact, Fn&& fn) {
        const auto start = std::chrono::steady_clock::now();
        try {
            if constexpr (std::is_void_v<decltype(fn())>) {
                fn();
                finish(stage, artifact, start);
            } else {
                auto value = fn();
                finish(stage, artifact, start);
                return value;
            }
        } catch (const Error& ex) {
            throw Error("stage '" + stage + "' failed: " + ex.what() +
                            (last_good_.empty() ? "" : " (last good artifact: " + last_good_ + ")"),
                        ex.exit_code());
        }
    }

private:
    void finish(const std::string& stage, const std::filesystem::path& artifact,
                std::chrono::steady_clock::time_point start) {
        timing_[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!artifact.empty()) last_good_ = artifact.string();
    }

    nlohmann::json& timing_;
    std::string& last_good_;
};

}  // namespace detail

/// detect -> absorb -> community graph -> pairwise -> scale, rotation and
/// translation averaging -> merge -> refine -> evaluate. Every stage writes
/// its artifact to out_dir.
inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    PipelineResult res;
    res.out_dir = cfg.out_dir;
    fs::create_directories(cfg.out_dir);
    std::string last_good;
    detail::StageRunner stage(res.timing, last_good);
    auto& report = res.report;

    std::optional<GroundTruthWorld> world;
    EpipolarGraph graph;
    if (cfg.world) {
        world = stage.run("synth", cfg.out_dir / "world.json", [&] {
            GroundTruthWorld w = generate_world(*cfg.world);
            io::write_json(cfg.out_dir / "world.json", io::world_to_json(w));
            io::write_json(cfg.out_dir / "eg.json", graph_to_json(w.graph));
            io::write_json(cfg.out_dir / "truth-labels.json", w.planted.communities());
            return w;
        });
        graph = world->graph;
    } else {
        graph = stage.run("load", "", [&] {
            std::ifstream in(cfg.graph_path);
            if (!in) throw ValidationError("cannot open graph " + cfg.graph_path.string());
            return load_graph(in);
        });
    }
    report["graph"] = {{"nodes", graph.node_count()}, {"edges", graph.edge_count()}};

    DetectionStage detection;
    if (world || cfg.partition_path.empty()) {
        detection = stage.run("detect", cfg.out_dir / "partition.json", [&] {
            DetectionStage d = detect_stage(graph, cfg.q_threshold, cfg.min_community_size);
            io::write_json(cfg.out_dir / "partition.json", io::partition_to_json(d.partition, d.q_max, d.flagged_isolated));
            return d;
        });
    } else {
        detection.partition = io::partition_from_json(io::read_json(cfg.partition_path), graph.node_count());
    }
    report["detection"] = {{"q_max", detection.q_max},
                           {"significant", detection.q_max > cfg.q_threshold},
                           {"communities", detection.partition.community_count()},
                           {"sizes", detection.partition.sizes()},
                           {"flagged_isolated", detection.flagged_isolated}};

    std::vector<Reconstruction> recs;
    if (world) {
        recs = stage.run("fracture", cfg.out_dir / "recs", [&] {
            FracturedWorld f = fracture(*world, detection.partition, cfg.workers);
            io::write_reconstructions(cfg.out_dir / "recs", f.recs);
            return std::move(f.recs);
        });
    } else {
        if (cfg.recs_dir.empty()) throw ValidationError("pipeline needs a world spec or a reconstruction directory");
        recs = io::read_reconstructions(cfg.recs_dir);
        if (static_cast<int>(recs.size()) != detection.partition.community_count())
            throw ValidationError("reconstruction count does not match the partition");
    }

    const CommunityGraph cg = build_community_graph(graph, detection.partition);
    const PairwiseStage pairwise = stage.run("pairwise", cfg.out_dir / "measurements.json", [&] {
        PairwiseStage p = pairwise_stage(recs, community_pairs(cg), cfg.ransac, cfg.workers);
        io::write_json(cfg.out_dir / "measurements.json", io::measurements_to_json(p.graph));
        return p;
    });
    res.warnings.insert(res.warnings.end(), pairwise.warnings.begin(), pairwise.warnings.end());
    report["pairwise"] = {{"pairs", pairwise.graph.measurements.size()}, {"dropped", pairwise.warnings.size()}};

    const SimilarityAveraging averaged = stage.run("average", cfg.out_dir / "transforms.json", [&] {
        SimilarityAveraging a = average_similarities(recs, pairwise.graph, cfg.averaging);
        io::write_json(cfg.out_dir / "measurements_translated.json", io::measurements_to_json(a.translated));
        io::write_json(cfg.out_dir / "transforms.json", io::transforms_to_json(a.transforms));
        return a;
    });
    res.warnings.insert(res.warnings.end(), averaged.warnings.begin(), averaged.warnings.end());
    report["averaging"] = averaging_residuals(averaged.translated, averaged.transforms);
    report["averaging"]["rotation_iterations"] = averaged.rotation_report.iterations;

    const MergedModel merged = stage.run("merge", cfg.out_dir / "merged.json", [&] {
        MergedModel m = merge_reconstructions(recs, averaged.transforms, cfg.workers);
        io::write_json(cfg.out_dir / "merged.json", io::merged_to_json(m));
        return m;
    });
    report["merge"] = {{"cameras", merged.cameras.size()}, {"points", merged.points.size()}};

    std::optional<RefineResult> refined;
    if (cfg.refine) {
        refined = stage.run("refine", cfg.out_dir / "merged_refined.json", [&] {
            RefineOptions ro;
            ro.huber_scale = cfg.ransac.inlier_threshold;
            ro.track_gate = inlier_gate(averaged.translated);
            RefineResult r = joint_refine(recs, averaged.transforms, ro, cfg.workers);
            io::write_json(cfg.out_dir / "transforms_refined.json", io::transforms_to_json(r.transforms));
            io::write_json(cfg.out_dir / "merged_refined.json", io::merged_to_json(r.model));
            return r;
        });
        report["refine"] = {{"skipped", refined->skipped},   {"notice", refined->notice},
                            {"iterations", refined->iterations}, {"initial_cost", refined->initial_cost},
                            {"final_cost", refined->final_cost}, {"huber_scale", refined->huber_scale}};
        if (refined->skipped) res.warnings.push_back(refined->notice);
    }

    if (cfg.evaluate && world) {
        stage.run("eval", cfg.out_dir / "eval.json", [&] {
            nlohmann::json doc;
            res.evaluation = evaluate_against_truth(merged, world->cameras, world->points);
            doc["merged"] = io::evaluation_to_json(*res.evaluation);
            if (refined) {
                res.evaluation_refined = evaluate_against_truth(refined->model, world->cameras, world->points);
                doc["refined"] = io::evaluation_to_json(*res.evaluation_refined);
            }
            io::write_json(cfg.out_dir / "eval.json", doc);
        });
    }

    report["warnings"] = res.warnings;
    io::write_json(cfg.out_dir / "report.json", report);
    io::write_json(cfg.out_dir / "timing.json", res.timing);
    return res;
}

}  // namespace csfm

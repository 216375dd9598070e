// csfm: community-based merging of partial reconstructions.
//
// Subcommands: synth | detect | pairwise | average | merge | refine | eval |
// export-ply | pipeline. Exit codes: 0 ok, 2 validation, 3 numeric failure,
// 4 disconnected graph.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "csfm/csfm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

csfm::EpipolarGraph read_graph(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw csfm::ValidationError("cannot open graph " + path.string());
    return csfm::load_graph(in);
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

void add_ransac_flags(CLI::App* cmd, csfm::RansacOptions& r) {
    cmd->add_option("--ransac-threshold", r.inlier_threshold,
                    "RANSAC inlier distance; <= 0 uses 0.01 x median extent of the shared points");
    cmd->add_option("--ransac-iterations", r.max_iterations, "RANSAC iteration budget")->check(CLI::PositiveNumber);
}

void add_l1_flags(CLI::App* cmd, csfm::AveragingOptions& a) {
    cmd->add_option("--irls-epsilon", a.l1.epsilon, "IRLS residual floor")->check(CLI::PositiveNumber);
    cmd->add_option("--irls-iterations", a.l1.max_iterations, "IRLS iteration budget")->check(CLI::PositiveNumber);
    cmd->add_option("--irls-tolerance", a.l1.tolerance, "IRLS relative step tolerance")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"csfm - community detection and global similarity averaging for partial reconstructions"};
    app.require_subcommand(1);
    int verbosity = 0;
    app.add_flag("-v,--verbose", verbosity, "Print diagnostics (repeat for more)");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic ground-truth world and fractured reconstructions");
    fs::path synth_spec, synth_out, synth_partition;
    std::uint64_t synth_seed = 0;
    synth->add_option("--spec", synth_spec, "World spec JSON (missing keys use defaults)");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Random seed")->required();
    synth->add_option("--partition", synth_partition, "Fracture along this partition instead of the planted labels");

    // detect
    auto* detect = app.add_subcommand("detect", "Partition an epipolar graph into communities");
    fs::path detect_graph, detect_out;
    double q_threshold = 0.3;
    int min_size = 20;
    detect->add_option("--graph", detect_graph, "Graph JSON")->required();
    detect->add_option("--q-threshold", q_threshold, "Modularity significance threshold");
    detect->add_option("--min-size", min_size, "Minimum community size")->check(CLI::PositiveNumber);
    detect->add_option("-o,--output", detect_out, "Partition JSON")->required();

    // pairwise
    auto* pairwise = app.add_subcommand("pairwise", "Estimate pairwise similarities between communities");
    fs::path pw_recs, pw_graph, pw_partition, pw_out;
    csfm::RansacOptions pw_ransac;
    int workers = 1;
    pairwise->add_option("--recs", pw_recs, "Directory with rec_<k>.json")->required();
    pairwise->add_option("--graph", pw_graph, "Graph JSON; with --partition restricts pairs to linked communities");
    pairwise->add_option("--partition", pw_partition, "Partition JSON");
    pairwise->add_option("--seed", pw_ransac.seed, "RANSAC seed")->required();
    pairwise->add_option("-j,--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    pairwise->add_option("-o,--output", pw_out, "Measurement JSON")->required();
    add_ransac_flags(pairwise, pw_ransac);

    // average
    auto* average = app.add_subcommand("average", "Global scale, rotation and translation averaging");
    fs::path avg_meas, avg_recs, avg_out;
    csfm::AveragingOptions avg_opts;
    average->add_option("--measurements", avg_meas, "Measurement JSON")->required();
    average->add_option("--recs", avg_recs, "Directory with rec_<k>.json")->required();
    average->add_option("-o,--output", avg_out, "Transform JSON")->required();
    add_l1_flags(average, avg_opts);

    // merge
    auto* merge = app.add_subcommand("merge", "Merge reconstructions into the global frame");
    fs::path merge_recs, merge_transforms, merge_out;
    merge->add_option("--recs", merge_recs, "Directory with rec_<k>.json")->required();
    merge->add_option("--transforms", merge_transforms, "Transform JSON")->required();
    merge->add_option("-j,--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    merge->add_option("-o,--output", merge_out, "Merged model JSON")->required();

    // refine
    auto* refine = app.add_subcommand("refine", "Jointly refine community similarities on co-visible points");
    fs::path ref_recs, ref_transforms, ref_out, ref_model_out, ref_meas;
    csfm::RefineOptions ref_opts;
    refine->add_option("--recs", ref_recs, "Directory with rec_<k>.json")->required();
    refine->add_option("--transforms", ref_transforms, "Transform JSON")->required();
    refine->add_option("--measurements", ref_meas, "Restrict each community pair to its RANSAC inlier tracks");
    refine->add_option("--huber", ref_opts.huber_scale, "Huber scale; <= 0 picks 0.01 x median extent");
    refine->add_option("-o,--output", ref_out, "Refined transform JSON")->required();
    refine->add_option("--model", ref_model_out, "Also write the re-merged model here");

    // eval
    auto* eval = app.add_subcommand("eval", "Compare a merged model against a synthetic ground truth");
    fs::path eval_model, eval_truth, eval_out;
    eval->add_option("--model", eval_model, "Merged model JSON")->required();
    eval->add_option("--truth", eval_truth, "world.json from synth")->required();
    eval->add_option("-o,--output", eval_out, "Report JSON (stdout when omitted)");

    // export-ply
    auto* ply = app.add_subcommand("export-ply", "Write merged points as ASCII PLY");
    fs::path ply_model, ply_out;
    bool ply_color = false;
    ply->add_option("--model", ply_model, "Merged model JSON")->required();
    ply->add_option("-o,--output", ply_out, "PLY file")->required();
    ply->add_flag("--color", ply_color, "Color points by community");

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "Run every stage, writing each artifact to --out");
    csfm::PipelineConfig cfg;
    fs::path pipe_spec;
    std::uint64_t pipe_seed = 0;
    bool no_refine = false;
    pipe->add_option("--spec", pipe_spec, "World spec JSON for a synthetic run");
    pipe->add_option("--graph", cfg.graph_path, "Graph JSON (non-synthetic run)");
    pipe->add_option("--partition", cfg.partition_path, "Partition JSON matching --recs (non-synthetic run)");
    pipe->add_option("--recs", cfg.recs_dir, "Directory with rec_<k>.json (non-synthetic run)");
    pipe->add_option("--seed", pipe_seed, "Seed for world generation and RANSAC")->required();
    pipe->add_option("--q-threshold", cfg.q_threshold, "Modularity significance threshold");
    pipe->add_option("--min-size", cfg.min_community_size, "Minimum community size")->check(CLI::PositiveNumber);
    pipe->add_option("-j,--workers", cfg.workers, "Worker threads")->check(CLI::PositiveNumber);
    pipe->add_flag("--no-refine", no_refine, "Skip joint refinement");
    pipe->add_option("--out", cfg.out_dir, "Output directory")->required();
    add_ransac_flags(pipe, cfg.ransac);
    add_l1_flags(pipe, cfg.averaging);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        // usage errors count as validation failures
        return app.exit(ex) == 0 ? 0 : 2;
    }

    try {
        if (*synth) {
            csfm::WorldSpec spec = synth_spec.empty() ? csfm::WorldSpec{}
                                                      : csfm::io::world_spec_from_json(csfm::io::read_json(synth_spec));
            spec.seed = synth_seed;
            const csfm::GroundTruthWorld world = csfm::generate_world(spec);
            csfm::io::write_json(synth_out / "world.json", csfm::io::world_to_json(world));
            csfm::io::write_json(synth_out / "eg.json", csfm::graph_to_json(world.graph));
            csfm::io::write_json(synth_out / "truth-labels.json", world.planted.communities());
            const csfm::Partition cut =
                synth_partition.empty()
                    ? world.planted
                    : csfm::io::partition_from_json(csfm::io::read_json(synth_partition), world.graph.node_count());
            const csfm::FracturedWorld pieces = csfm::fracture(world, cut);
            csfm::io::write_reconstructions(synth_out, pieces.recs);
            std::cout << "cameras " << world.cameras.size() << ", points " << world.points.size() << ", EG edges "
                      << world.graph.edge_count() << ", communities " << cut.community_count() << "\n";
        } else if (*detect) {
            const csfm::EpipolarGraph g = read_graph(detect_graph);
            std::map<int, int> histogram;
            for (int v = 0; v < g.node_count(); ++v) histogram[g.degree(v)] += 1;
            const csfm::DetectionStage d = csfm::detect_stage(g, q_threshold, min_size);
            csfm::io::write_json(detect_out, csfm::io::partition_to_json(d.partition, d.q_max, d.flagged_isolated));
            std::cout << "nodes " << g.node_count() << ", edges " << g.edge_count() << ", q_max " << d.q_max
                      << ", communities " << d.partition.community_count() << "\n";
            if (verbosity > 0) {
                std::cout << "degree histogram:";
                for (const auto& [deg, count] : histogram) std::cout << " " << deg << ":" << count;
                std::cout << "\n";
            }
        } else if (*pairwise) {
            const auto recs = csfm::io::read_reconstructions(pw_recs);
            std::vector<std::pair<int, int>> pairs;
            if (!pw_graph.empty() && !pw_partition.empty()) {
                const csfm::EpipolarGraph g = read_graph(pw_graph);
                const csfm::Partition p = csfm::io::partition_from_json(csfm::io::read_json(pw_partition), g.node_count());
                pairs = csfm::community_pairs(csfm::build_community_graph(g, p));
            }
            const csfm::PairwiseStage stage = csfm::pairwise_stage(recs, pairs, pw_ransac, workers);
            print_warnings(stage.warnings);
            csfm::io::write_json(pw_out, csfm::io::measurements_to_json(stage.graph));
            std::cout << "measured " << stage.graph.measurements.size() << " pairs\n";
        } else if (*average) {
            const auto recs = csfm::io::read_reconstructions(avg_recs);
            csfm::MeasurementGraph mg = csfm::io::measurements_from_json(csfm::io::read_json(avg_meas));
            mg.community_count = static_cast<int>(recs.size());
            if (verbosity > 1) {
                // residual dump of the scale problem, one line per IRLS iteration
                std::vector<Eigen::VectorXd> rhs;
                for (const auto& m : mg.measurements) rhs.push_back(Eigen::VectorXd::Constant(1, -std::log(m.s_ij)));
                if (mg.community_count > 1)
                    csfm::solve_l1(csfm::detail::difference_system(mg, 1, rhs), avg_opts.l1,
                                   [](int it, const Eigen::VectorXd& r) {
                                       std::cerr << "scale irls " << it << ": |r|_1 = " << r.lpNorm<1>()
                                                 << ", |r|_inf = " << r.lpNorm<Eigen::Infinity>() << "\n";
                                   });
            }
            const csfm::SimilarityAveraging a = csfm::average_similarities(recs, mg, avg_opts);
            print_warnings(a.warnings);
            csfm::io::write_json(avg_out, csfm::io::transforms_to_json(a.transforms));
            if (verbosity > 0) std::cout << csfm::averaging_residuals(a.translated, a.transforms).dump(1) << "\n";
        } else if (*merge) {
            const auto recs = csfm::io::read_reconstructions(merge_recs);
            const auto xs = csfm::io::transforms_from_json(csfm::io::read_json(merge_transforms));
            const csfm::MergedModel model = csfm::merge_reconstructions(recs, xs, workers);
            csfm::io::write_json(merge_out, csfm::io::merged_to_json(model));
            std::cout << "merged " << model.cameras.size() << " cameras, " << model.points.size() << " points\n";
        } else if (*refine) {
            const auto recs = csfm::io::read_reconstructions(ref_recs);
            const auto xs = csfm::io::transforms_from_json(csfm::io::read_json(ref_transforms));
            if (!ref_meas.empty())
                ref_opts.track_gate = csfm::inlier_gate(csfm::io::measurements_from_json(csfm::io::read_json(ref_meas)));
            const csfm::RefineResult r = csfm::joint_refine(recs, xs, ref_opts);
            if (r.skipped) std::cerr << "notice: " << r.notice << "\n";
            csfm::io::write_json(ref_out, csfm::io::transforms_to_json(r.transforms));
            if (!ref_model_out.empty()) csfm::io::write_json(ref_model_out, csfm::io::merged_to_json(r.model));
            std::cout << "cost " << r.initial_cost << " -> " << r.final_cost << " in " << r.iterations
                      << " iterations\n";
        } else if (*eval) {
            const csfm::MergedModel model = csfm::io::merged_from_json(csfm::io::read_json(eval_model));
            const csfm::GroundTruthWorld world = csfm::io::world_from_json(csfm::io::read_json(eval_truth));
            const json doc = csfm::io::evaluation_to_json(csfm::evaluate_against_truth(model, world.cameras, world.points));
            if (eval_out.empty()) std::cout << doc.dump(1) << "\n";
            else csfm::io::write_json(eval_out, doc);
        } else if (*ply) {
            const csfm::MergedModel model = csfm::io::merged_from_json(csfm::io::read_json(ply_model));
            csfm::io::write_text(ply_out, csfm::io::to_ply(model, ply_color));
        } else if (*pipe) {
            if (!pipe_spec.empty()) {
                csfm::WorldSpec spec = csfm::io::world_spec_from_json(csfm::io::read_json(pipe_spec));
                spec.seed = pipe_seed;
                cfg.world = spec;
            } else if (cfg.graph_path.empty() || cfg.recs_dir.empty() || cfg.partition_path.empty()) {
                throw csfm::ValidationError("pipeline needs --spec, or --graph with --partition and --recs");
            }
            cfg.ransac.seed = pipe_seed;
            cfg.refine = !no_refine;
            const csfm::PipelineResult r = csfm::run_pipeline(cfg);
            print_warnings(r.warnings);
            if (r.evaluation)
                std::cout << "median camera center error " << r.evaluation->median_center_error << "\n";
            if (r.evaluation_refined)
                std::cout << "median camera center error after refinement " << r.evaluation_refined->median_center_error
                          << "\n";
            std::cout << "artifacts in " << r.out_dir.string() << "\n";
        }
    } catch (const csfm::Error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return ex.exit_code();
    } catch (const nlohmann::json::exception& ex) {
        std::cerr << "error: malformed input: " << ex.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }
    return 0;
}

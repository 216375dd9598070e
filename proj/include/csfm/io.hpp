#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csfm/averaging.hpp"
#include "csfm/community.hpp"
#include "csfm/eg_graph.hpp"
#include "csfm/errors.hpp"
#include "csfm/geometry.hpp"
#include "csfm/merge.hpp"
#include "csfm/reconstruction.hpp"
#include "csfm/synth.hpp"

namespace csfm::io {

using nlohmann::json;

// -- primitives -------------------------------------------------------------

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json to_json(const Rotation& r) { return json::array({r.w(), r.x(), r.y(), r.z()}); }

inline json to_json(const Sim3& x) { return {{"s", x.s}, {"q", to_json(x.r)}, {"t", to_json(x.t)}}; }

inline const json& field(const json& obj, const char* key) {
    if (!obj.is_object() || !obj.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
    return obj.at(key);
}

inline double number(const json& j) {
    if (!j.is_number()) throw ValidationError("expected a number");
    return j.get<double>();
}

inline Vec3 vec3_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw ValidationError("expected a 3-element array");
    return {number(j[0]), number(j[1]), number(j[2])};
}

inline Rotation rotation_from(const json& j) {
    if (!j.is_array() || j.size() != 4) throw ValidationError("expected a quaternion [w,x,y,z]");
    return Rotation(number(j[0]), number(j[1]), number(j[2]), number(j[3]));
}

inline Sim3 sim3_from(const json& j) {
    Sim3 x{number(field(j, "s")), rotation_from(field(j, "q")), vec3_from(field(j, "t"))};
    if (!(x.s > 0.0) || !std::isfinite(x.s) || !x.t.allFinite())
        throw ValidationError("similarity needs a positive finite scale and finite translation");
    return x;
}

// -- files ------------------------------------------------------------------

inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& ex) {
        throw ValidationError("malformed JSON in " + path.string() + ": " + ex.what());
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

inline void write_json(const std::filesystem::path& path, const json& doc) { write_text(path, doc.dump(1) + "\n"); }

// -- partition --------------------------------------------------------------

inline json partition_to_json(const Partition& p, double q_max, const std::vector<CommunityId>& flagged) {
    return {{"q_max", q_max}, {"communities", p.communities()}, {"flagged_isolated", flagged}};
}

inline Partition partition_from_json(const json& doc, int node_count) {
    std::vector<std::vector<NodeIndex>> groups;
    for (const auto& grp : field(doc, "communities")) groups.push_back(grp.get<std::vector<NodeIndex>>());
    return Partition::from_communities(node_count, std::move(groups));
}

// -- measurements -----------------------------------------------------------

inline json measurement_to_json(const PairwiseSimilarityMeasurement& m) {
    return {{"i", m.i},
            {"j", m.j},
            {"s_ij", m.s_ij},
            {"q_ij", to_json(m.r_ij)},
            {"t_ij", m.t_ij ? to_json(*m.t_ij) : json(nullptr)},
            {"inliers", m.inlier_count},
            {"inlier_tracks", m.inlier_tracks}};
}

inline json measurements_to_json(const MeasurementGraph& mg) {
    json out = json::array();
    for (const auto& m : mg.measurements) out.push_back(measurement_to_json(m));
    return out;
}

/// Reads a measurement list; community_count is one more than the largest id.
inline MeasurementGraph measurements_from_json(const json& doc) {
    if (!doc.is_array()) throw ValidationError("measurement file must be a JSON array");
    MeasurementGraph mg;
    for (const auto& e : doc) {
        PairwiseSimilarityMeasurement m;
        m.i = field(e, "i").get<int>();
        m.j = field(e, "j").get<int>();
        m.s_ij = number(field(e, "s_ij"));
        m.r_ij = rotation_from(field(e, "q_ij"));
        if (e.contains("t_ij") && !e["t_ij"].is_null()) m.t_ij = vec3_from(e["t_ij"]);
        if (e.contains("inliers")) m.inlier_count = e["inliers"].get<int>();
        if (e.contains("inlier_tracks")) m.inlier_tracks = e["inlier_tracks"].get<std::vector<TrackId>>();
        mg.measurements.push_back(canonicalize(m));
        mg.community_count = std::max({mg.community_count, m.i + 1, m.j + 1});
    }
    return mg;
}

// -- transforms -------------------------------------------------------------

inline json transforms_to_json(const std::vector<CommunitySimilarity>& xs) {
    json out = json::array();
    for (const auto& x : xs) {
        json e = to_json(x.transform);
        e["id"] = x.id;
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<CommunitySimilarity> transforms_from_json(const json& doc) {
    if (!doc.is_array()) throw ValidationError("transform file must be a JSON array");
    std::vector<CommunitySimilarity> out;
    for (const auto& e : doc) out.push_back({field(e, "id").get<int>(), sim3_from(e)});
    return out;
}

// -- reconstructions --------------------------------------------------------

inline json reconstruction_to_json(const Reconstruction& rec) {
    json cams = json::array();
    for (const auto& c : rec.cameras) cams.push_back({{"id", c.id}, {"q", to_json(c.rotation)}, {"c", to_json(c.center)}});
    json pts = json::array();
    for (const auto& p : rec.points) pts.push_back({{"track", p.track}, {"x", to_json(p.position)}});
    return {{"community", rec.community}, {"cameras", std::move(cams)}, {"points", std::move(pts)}};
}

inline Reconstruction reconstruction_from_json(const json& doc) {
    Reconstruction rec;
    rec.community = field(doc, "community").get<int>();
    for (const auto& c : field(doc, "cameras"))
        rec.cameras.push_back({field(c, "id").get<CameraId>(), rotation_from(field(c, "q")), vec3_from(field(c, "c"))});
    for (const auto& p : field(doc, "points"))
        rec.points.push_back({field(p, "track").get<TrackId>(), vec3_from(field(p, "x"))});
    rec.sort_points();
    rec.validate();
    return rec;
}

inline std::string reconstruction_filename(int community) { return "rec_" + std::to_string(community) + ".json"; }

inline void write_reconstructions(const std::filesystem::path& dir, const std::vector<Reconstruction>& recs) {
    for (const auto& rec : recs) write_json(dir / reconstruction_filename(rec.community), reconstruction_to_json(rec));
}

/// Loads rec_0.json, rec_1.json, ... until the first missing index.
inline std::vector<Reconstruction> read_reconstructions(const std::filesystem::path& dir) {
    std::vector<Reconstruction> recs;
    for (int k = 0;; ++k) {
        const auto path = dir / reconstruction_filename(k);
        if (!std::filesystem::exists(path)) break;
        recs.push_back(reconstruction_from_json(read_json(path)));
        if (recs.back().community != k)
            throw ValidationError(path.string() + " declares community " + std::to_string(recs.back().community));
    }
    if (recs.empty()) throw ValidationError("no rec_<k>.json files in " + dir.string());
    return recs;
}

// -- merged model -----------------------------------------------------------

inline json merged_to_json(const MergedModel& model) {
    json cams = json::array();
    for (const auto& c : model.cameras)
        cams.push_back({{"id", c.id}, {"community", c.community}, {"q", to_json(c.rotation)}, {"c", to_json(c.center)}});
    json pts = json::array();
    for (const auto& p : model.points)
        pts.push_back({{"track", p.track}, {"x", to_json(p.position)}, {"communities", p.communities}, {"spread", p.spread}});
    return {{"cameras", std::move(cams)}, {"points", std::move(pts)}};
}

inline MergedModel merged_from_json(const json& doc) {
    MergedModel model;
    for (const auto& c : field(doc, "cameras"))
        model.cameras.push_back({field(c, "id").get<CameraId>(), field(c, "community").get<int>(),
                                 rotation_from(field(c, "q")), vec3_from(field(c, "c"))});
    for (const auto& p : field(doc, "points")) {
        MergedPoint mp;
        mp.track = field(p, "track").get<TrackId>();
        mp.position = vec3_from(field(p, "x"));
        if (p.contains("communities")) mp.communities = p["communities"].get<std::vector<int>>();
        if (p.contains("spread")) mp.spread = number(p["spread"]);
        model.points.push_back(std::move(mp));
    }
    return model;
}

// -- synthetic world --------------------------------------------------------

inline json world_spec_to_json(const WorldSpec& s) {
    return {{"camera_count", s.camera_count},
            {"point_count", s.point_count},
            {"cluster_count", s.cluster_count},
            {"cluster_spread", s.cluster_spread},
            {"cluster_separation", s.cluster_separation},
            {"visibility_radius", s.visibility_radius},
            {"backbone_fraction", s.backbone_fraction},
            {"backbone_spread", s.backbone_spread},
            {"min_shared_tracks", s.min_shared_tracks},
            {"noise_sigma", s.noise_sigma},
            {"outlier_fraction", s.outlier_fraction},
            {"outlier_displacement", s.outlier_displacement},
            {"randomize_frames", s.randomize_frames},
            {"seed", s.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline WorldSpec world_spec_from_json(const json& doc) {
    if (!doc.is_object()) throw ValidationError("world spec must be a JSON object");
    WorldSpec s;
    for (const auto& [key, value] : doc.items()) {
        try {
            if (key == "camera_count") s.camera_count = value.get<int>();
            else if (key == "point_count") s.point_count = value.get<int>();
            else if (key == "cluster_count") s.cluster_count = value.get<int>();
            else if (key == "cluster_spread") s.cluster_spread = value.get<double>();
            else if (key == "cluster_separation") s.cluster_separation = value.get<double>();
            else if (key == "visibility_radius") s.visibility_radius = value.get<double>();
            else if (key == "backbone_fraction") s.backbone_fraction = value.get<double>();
            else if (key == "backbone_spread") s.backbone_spread = value.get<double>();
            else if (key == "min_shared_tracks") s.min_shared_tracks = value.get<int>();
            else if (key == "noise_sigma") s.noise_sigma = value.get<double>();
            else if (key == "outlier_fraction") s.outlier_fraction = value.get<double>();
            else if (key == "outlier_displacement") s.outlier_displacement = value.get<double>();
            else if (key == "randomize_frames") s.randomize_frames = value.get<bool>();
            else if (key == "seed") s.seed = value.get<std::uint64_t>();
            else throw ValidationError("unknown world spec key '" + key + "'");
        } catch (const json::exception&) {
            throw ValidationError("world spec key '" + key + "' has the wrong type");
        }
    }
    s.validate();
    return s;
}

inline json world_to_json(const GroundTruthWorld& w) {
    json cams = json::array();
    for (std::size_t k = 0; k < w.cameras.size(); ++k) {
        const auto& c = w.cameras[k];
        cams.push_back({{"id", c.id}, {"q", to_json(c.rotation)}, {"c", to_json(c.center)}, {"cluster", w.planted[static_cast<int>(k)]}});
    }
    json pts = json::array();
    for (const auto& p : w.points) pts.push_back({{"track", p.track}, {"x", to_json(p.position)}});
    json frames = json::array();
    for (const auto& f : w.planted_frames) frames.push_back(to_json(f));
    return {{"spec", world_spec_to_json(w.spec)}, {"cameras", std::move(cams)}, {"points", std::move(pts)},
            {"visibility", w.visibility}, {"planted_frames", std::move(frames)}, {"graph", graph_to_json(w.graph)}};
}

inline GroundTruthWorld world_from_json(const json& doc) {
    GroundTruthWorld w;
    w.spec = world_spec_from_json(field(doc, "spec"));
    std::vector<int> labels;
    for (const auto& c : field(doc, "cameras")) {
        w.cameras.push_back({field(c, "id").get<CameraId>(), rotation_from(field(c, "q")), vec3_from(field(c, "c"))});
        labels.push_back(field(c, "cluster").get<int>());
    }
    for (const auto& p : field(doc, "points"))
        w.points.push_back({field(p, "track").get<TrackId>(), vec3_from(field(p, "x"))});
    w.visibility = field(doc, "visibility").get<std::vector<std::vector<TrackId>>>();
    for (const auto& f : field(doc, "planted_frames")) w.planted_frames.push_back(sim3_from(f));
    w.graph = graph_from_json(field(doc, "graph"));
    w.planted = Partition(labels);
    if (w.visibility.size() != w.cameras.size()) throw ValidationError("world: visibility does not match cameras");
    return w;
}

// -- reports ----------------------------------------------------------------

inline json evaluation_to_json(const EvaluationReport& r) {
    return {{"cameras", r.cameras},
            {"aligned_inliers", r.aligned_inliers},
            {"median_center_error", r.median_center_error},
            {"rmse_center_error", r.rmse_center_error},
            {"median_rotation_error_rad", r.median_rotation_error},
            {"shared_points", r.shared_points},
            {"point_rmse", r.point_rmse},
            {"alignment", to_json(r.alignment)}};
}

// -- point cloud ------------------------------------------------------------

/// ASCII PLY of the merged points, optionally colored by the first
/// contributing community.
inline std::string to_ply(const MergedModel& model, bool color) {
    static constexpr std::array<std::array<int, 3>, 8> palette{{{230, 25, 75},
                                                                 {60, 180, 75},
                                                                 {0, 130, 200},
                                                                 {245, 130, 48},
                                                                 {145, 30, 180},
                                                                 {70, 240, 240},
                                                                 {240, 50, 230},
                                                                 {210, 245, 60}}};
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << model.points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n";
    if (color) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    char buf[128];
    for (const auto& p : model.points) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", p.position.x(), p.position.y(), p.position.z());
        out << buf;
        if (color) {
            const int c = p.communities.empty() ? 0 : p.communities.front();
            const auto& rgb = palette[static_cast<std::size_t>(c) % palette.size()];
            out << ' ' << rgb[0] << ' ' << rgb[1] << ' ' << rgb[2];
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace csfm::io

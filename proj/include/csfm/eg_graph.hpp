#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "csfm/errors.hpp"

namespace csfm {

using NodeIndex = int;

struct Edge {
    NodeIndex i = 0;
    NodeIndex j = 0;
    int weight = 1;  // inlier match count, diagnostics only
};

/// Undirected image-match graph. Vertices are images, edges are matched
/// pairs. All modularity math treats adjacency as binary; weights are kept
/// for reporting. Immutable once constructed.
class EpipolarGraph {
public:
    EpipolarGraph() = default;

    /// Unlabelled graph; labels default to the decimal index.
    EpipolarGraph(int node_count, std::vector<Edge> edges)
        : EpipolarGraph(default_labels(node_count), std::move(edges)) {}

    EpipolarGraph(std::vector<std::string> labels, std::vector<Edge> edges)
        : labels_(std::move(labels)), edges_(std::move(edges)) {
        const int n = node_count();
        adjacency_.assign(n, {});
        std::set<std::pair<int, int>> seen;
        for (const Edge& e : edges_) {
            if (e.i < 0 || e.i >= n || e.j < 0 || e.j >= n)
                throw ValidationError("edge (" + std::to_string(e.i) + "," + std::to_string(e.j) +
                                      ") has an endpoint out of range [0," + std::to_string(n) + ")");
            if (e.i == e.j)
                throw ValidationError("self-loop on node " + std::to_string(e.i));
            if (e.weight <= 0)
                throw ValidationError("edge (" + std::to_string(e.i) + "," + std::to_string(e.j) +
                                      ") has non-positive weight");
            if (!seen.emplace(std::min(e.i, e.j), std::max(e.i, e.j)).second)
                throw ValidationError("duplicate edge (" + std::to_string(e.i) + "," + std::to_string(e.j) + ")");
            adjacency_[e.i].push_back(e.j);
            adjacency_[e.j].push_back(e.i);
        }
        for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());
    }

    int node_count() const { return static_cast<int>(labels_.size()); }
    int edge_count() const { return static_cast<int>(edges_.size()); }
    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<std::string>& labels() const { return labels_; }

    /// Sorted neighbor list of node i.
    const std::vector<NodeIndex>& neighbors(NodeIndex i) const {
        check_index(i);
        return adjacency_[i];
    }

    int degree(NodeIndex i) const {
        check_index(i);
        return static_cast<int>(adjacency_[i].size());
    }

private:
    static std::vector<std::string> default_labels(int n) {
        if (n < 0) throw ValidationError("negative node count");
        std::vector<std::string> labels(n);
        for (int k = 0; k < n; ++k) labels[k] = std::to_string(k);
        return labels;
    }

    void check_index(NodeIndex i) const {
        if (i < 0 || i >= node_count())
            throw ValidationError("node index " + std::to_string(i) + " out of range");
    }

    std::vector<std::string> labels_;
    std::vector<Edge> edges_;
    std::vector<std::vector<NodeIndex>> adjacency_;
};

inline int degree(const EpipolarGraph& g, NodeIndex i) { return g.degree(i); }

struct Subgraph {
    EpipolarGraph graph;
    std::vector<NodeIndex> to_parent;     // new index -> old index
    std::map<NodeIndex, NodeIndex> from_parent;  // old index -> new index
};

/// Subgraph on `nodes`, keeping exactly the edges with both endpoints inside.
/// New indices follow the ascending order of the old ones.
inline Subgraph induced_subgraph(const EpipolarGraph& g, const std::vector<NodeIndex>& nodes) {
    if (nodes.empty()) throw ValidationError("induced_subgraph: empty node set");
    Subgraph sub;
    sub.to_parent = nodes;
    std::sort(sub.to_parent.begin(), sub.to_parent.end());
    sub.to_parent.erase(std::unique(sub.to_parent.begin(), sub.to_parent.end()), sub.to_parent.end());
    std::vector<std::string> labels;
    labels.reserve(sub.to_parent.size());
    for (std::size_t k = 0; k < sub.to_parent.size(); ++k) {
        const NodeIndex old = sub.to_parent[k];
        if (old < 0 || old >= g.node_count())
            throw ValidationError("induced_subgraph: node " + std::to_string(old) + " out of range");
        sub.from_parent[old] = static_cast<NodeIndex>(k);
        labels.push_back(g.labels()[old]);
    }
    std::vector<Edge> edges;
    for (const Edge& e : g.edges()) {
        auto a = sub.from_parent.find(e.i);
        auto b = sub.from_parent.find(e.j);
        if (a != sub.from_parent.end() && b != sub.from_parent.end())
            edges.push_back({a->second, b->second, e.weight});
    }
    sub.graph = EpipolarGraph(std::move(labels), std::move(edges));
    return sub;
}

/// Connected components, each sorted ascending, ordered by smallest member.
inline std::vector<std::vector<NodeIndex>> connected_components(const EpipolarGraph& g) {
    const int n = g.node_count();
    std::vector<int> comp(n, -1);
    std::vector<std::vector<NodeIndex>> out;
    for (int start = 0; start < n; ++start) {
        if (comp[start] >= 0) continue;
        const int id = static_cast<int>(out.size());
        out.emplace_back();
        std::vector<NodeIndex> stack{start};
        comp[start] = id;
        while (!stack.empty()) {
            const NodeIndex u = stack.back();
            stack.pop_back();
            out[id].push_back(u);
            for (NodeIndex v : g.neighbors(u)) {
                if (comp[v] < 0) {
                    comp[v] = id;
                    stack.push_back(v);
                }
            }
        }
        std::sort(out[id].begin(), out[id].end());
    }
    return out;
}

// Graph file: {"nodes": ["img_000", ...], "edges": [{"i":0,"j":1,"w":142}, ...]}

inline EpipolarGraph graph_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("nodes") || !doc.contains("edges") || !doc["nodes"].is_array() ||
        !doc["edges"].is_array())
        throw ValidationError("graph file must be an object with 'nodes' and 'edges' arrays");
    std::vector<std::string> labels;
    for (const auto& node : doc["nodes"]) {
        if (!node.is_string()) throw ValidationError("graph node labels must be strings");
        labels.push_back(node.get<std::string>());
    }
    std::vector<Edge> edges;
    for (const auto& e : doc["edges"]) {
        if (!e.is_object() || !e.contains("i") || !e.contains("j") || !e["i"].is_number_integer() ||
            !e["j"].is_number_integer())
            throw ValidationError("graph edge must be an object with integer 'i' and 'j'");
        Edge edge{e["i"].get<int>(), e["j"].get<int>(), 1};
        if (e.contains("w")) {
            if (!e["w"].is_number_integer()) throw ValidationError("edge weight must be an integer");
            edge.weight = e["w"].get<int>();
        }
        edges.push_back(edge);
    }
    return EpipolarGraph(std::move(labels), std::move(edges));
}

inline nlohmann::json graph_to_json(const EpipolarGraph& g) {
    nlohmann::json edges = nlohmann::json::array();
    for (const Edge& e : g.edges()) edges.push_back({{"i", e.i}, {"j", e.j}, {"w", e.weight}});
    return {{"nodes", g.labels()}, {"edges", std::move(edges)}};
}

inline EpipolarGraph load_graph(std::istream& source) {
    nlohmann::json doc;
    try {
        source >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("malformed graph file: ") + ex.what());
    }
    return graph_from_json(doc);
}

}  // namespace csfm

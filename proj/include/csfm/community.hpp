#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "csfm/eg_graph.hpp"
#include "csfm/errors.hpp"

namespace csfm {

using CommunityId = int;

/// Assignment of every node to exactly one community; ids are contiguous
/// in [0, community_count) and no community is empty.
class Partition {
public:
    Partition() = default;

    explicit Partition(std::vector<CommunityId> assignment) : assignment_(std::move(assignment)) {
        int k = 0;
        for (CommunityId c : assignment_) {
            if (c < 0) throw ValidationError("partition: negative community id");
            k = std::max(k, c + 1);
        }
        std::vector<int> sizes(k, 0);
        for (CommunityId c : assignment_) ++sizes[c];
        for (int c = 0; c < k; ++c)
            if (sizes[c] == 0) throw ValidationError("partition: community " + std::to_string(c) + " is empty");
        count_ = k;
    }

    /// Builds a partition from member lists; communities are renumbered by
    /// their smallest member so the result does not depend on list order.
    static Partition from_communities(int node_count, std::vector<std::vector<NodeIndex>> groups) {
        for (auto& grp : groups) std::sort(grp.begin(), grp.end());
        groups.erase(std::remove_if(groups.begin(), groups.end(), [](const auto& grp) { return grp.empty(); }),
                     groups.end());
        std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
        std::vector<CommunityId> assignment(node_count, -1);
        for (std::size_t c = 0; c < groups.size(); ++c) {
            for (NodeIndex v : groups[c]) {
                if (v < 0 || v >= node_count) throw ValidationError("partition: node out of range");
                if (assignment[v] >= 0) throw ValidationError("partition: node assigned twice");
                assignment[v] = static_cast<CommunityId>(c);
            }
        }
        for (CommunityId c : assignment)
            if (c < 0) throw ValidationError("partition: node left unassigned");
        return Partition(std::move(assignment));
    }

    static Partition single(int node_count) { return Partition(std::vector<CommunityId>(node_count, 0)); }

    int node_count() const { return static_cast<int>(assignment_.size()); }
    int community_count() const { return count_; }
    CommunityId operator[](NodeIndex v) const { return assignment_.at(v); }
    const std::vector<CommunityId>& assignment() const { return assignment_; }

    std::vector<std::vector<NodeIndex>> communities() const {
        std::vector<std::vector<NodeIndex>> out(count_);
        for (NodeIndex v = 0; v < node_count(); ++v) out[assignment_[v]].push_back(v);
        return out;
    }

    std::vector<int> sizes() const {
        std::vector<int> out(count_, 0);
        for (CommunityId c : assignment_) ++out[c];
        return out;
    }

    bool operator==(const Partition&) const = default;

private:
    std::vector<CommunityId> assignment_;
    int count_ = 0;
};

struct MergeStep {
    CommunityId a = 0;  // surviving id (the smaller one)
    CommunityId b = 0;  // absorbed id
    double q_after = 0.0;
};

struct DendrogramTrace {
    std::vector<MergeStep> merges;
    double q_peak = 0.0;
    int peak_index = -1;  // index into merges; the peak state is after merges[0..peak_index]
};

struct CommunityGraph {
    int community_count = 0;
    std::map<std::pair<CommunityId, CommunityId>, int> cross_edges;  // keys ordered (p < q)
    std::vector<int> sizes;
};

namespace detail {
inline void require_cover(const EpipolarGraph& g, const Partition& p) {
    if (p.node_count() != g.node_count())
        throw ValidationError("partition covers " + std::to_string(p.node_count()) + " nodes, graph has " +
                              std::to_string(g.node_count()));
}
}  // namespace detail

/// Newman modularity with binary adjacency, evaluated per community as
/// sum_c [ L_c / m - (D_c / 2m)^2 ] (L_c intra-community edges, D_c degree sum).
inline double modularity(const EpipolarGraph& g, const Partition& p) {
    detail::require_cover(g, p);
    const double m = g.edge_count();
    if (g.edge_count() == 0) throw ValidationError("modularity undefined for a graph without edges");
    std::vector<double> intra(p.community_count(), 0.0);
    std::vector<double> deg_sum(p.community_count(), 0.0);
    for (const Edge& e : g.edges())
        if (p[e.i] == p[e.j]) intra[p[e.i]] += 1.0;
    for (NodeIndex v = 0; v < g.node_count(); ++v) deg_sum[p[v]] += g.degree(v);
    double q = 0.0;
    for (int c = 0; c < p.community_count(); ++c) {
        const double a = deg_sum[c] / (2.0 * m);
        q += intra[c] / m - a * a;
    }
    return q;
}

/// Agglomerative modularity maximization from singletons. Only
/// edge-connected community pairs are merge candidates. The gain of merging
/// p and q is proportional to the integer 2m*L_pq - D_p*D_q, so candidates
/// are ranked exactly; ties go to the lexicographically smallest pair.
inline DendrogramTrace greedy_merge_trace(const EpipolarGraph& g) {
    const int n = g.node_count();
    const std::int64_t m = g.edge_count();
    if (m == 0) throw ValidationError("greedy_merge_trace: graph has no edges");
    if (connected_components(g).size() != 1)
        throw ValidationError("greedy_merge_trace: graph is disconnected; split into components first");

    const std::int64_t two_m = 2 * m;
    std::vector<std::int64_t> deg_sum(n);
    std::vector<std::map<CommunityId, std::int64_t>> links(n);  // cross-edge counts between live communities
    std::int64_t q_num = 0;  // Q * (2m)^2, exact
    for (NodeIndex v = 0; v < n; ++v) {
        deg_sum[v] = g.degree(v);
        q_num -= deg_sum[v] * deg_sum[v];
    }
    for (const Edge& e : g.edges()) {
        links[e.i][e.j] += 1;
        links[e.j][e.i] += 1;
    }

    auto gain = [&](CommunityId a, CommunityId b, std::int64_t l) { return two_m * l - deg_sum[a] * deg_sum[b]; };
    // ordered by gain desc, then (a, b) asc
    using Key = std::tuple<std::int64_t, CommunityId, CommunityId>;
    std::set<Key> queue;
    auto key_of = [&](CommunityId a, CommunityId b, std::int64_t l) {
        if (a > b) std::swap(a, b);
        return Key{-gain(a, b, l), a, b};
    };
    for (CommunityId a = 0; a < n; ++a)
        for (const auto& [b, l] : links[a])
            if (a < b) queue.insert(key_of(a, b, l));

    const double norm = static_cast<double>(two_m) * static_cast<double>(two_m);
    DendrogramTrace trace;
    std::int64_t best_num = 0;
    while (!queue.empty()) {
        const auto [neg_gain, a, b] = *queue.begin();
        // a < b; b is absorbed into a
        for (const auto& [c, l] : links[a])
            if (c != b) queue.erase(key_of(a, c, l));
        for (const auto& [c, l] : links[b])
            if (c != a) queue.erase(key_of(b, c, l));
        queue.erase(key_of(a, b, links[a][b]));

        q_num += -2 * neg_gain;
        links[a].erase(b);
        links[b].erase(a);
        for (const auto& [c, l] : links[b]) {
            links[a][c] += l;
            links[c].erase(b);
            links[c][a] += l;
        }
        links[b].clear();
        deg_sum[a] += deg_sum[b];
        deg_sum[b] = 0;
        for (const auto& [c, l] : links[a]) queue.insert(key_of(a, c, l));

        trace.merges.push_back({a, b, static_cast<double>(q_num) / norm});
        if (trace.peak_index < 0 || q_num > best_num) {
            best_num = q_num;
            trace.peak_index = static_cast<int>(trace.merges.size()) - 1;
        }
    }
    trace.q_peak = static_cast<double>(best_num) / norm;
    return trace;
}

/// Partition obtained by replaying the first `merge_count` merges of a trace.
inline Partition partition_after(int node_count, const DendrogramTrace& trace, int merge_count) {
    std::vector<int> parent(node_count);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
        while (parent[v] != v) v = parent[v] = parent[parent[v]];
        return v;
    };
    for (int k = 0; k < merge_count; ++k) parent[find(trace.merges[k].b)] = find(trace.merges[k].a);
    std::map<int, std::vector<NodeIndex>> groups;
    for (NodeIndex v = 0; v < node_count; ++v) groups[find(v)].push_back(v);
    std::vector<std::vector<NodeIndex>> lists;
    for (auto& [root, members] : groups) lists.push_back(std::move(members));
    return Partition::from_communities(node_count, std::move(lists));
}

struct BestPartition {
    Partition partition;
    double q_max = 0.0;
    bool significant = false;
};

/// Cuts the dendrogram at its modularity peak. Without significant structure
/// (q_max <= threshold) every node goes into one community.
inline BestPartition best_partition(const EpipolarGraph& g, double q_threshold) {
    if (g.node_count() == 1) return {Partition::single(1), 0.0, false};
    const DendrogramTrace trace = greedy_merge_trace(g);
    BestPartition out;
    out.q_max = trace.q_peak;
    out.significant = trace.q_peak > q_threshold;
    out.partition = out.significant ? partition_after(g.node_count(), trace, trace.peak_index + 1)
                                    : Partition::single(g.node_count());
    return out;
}

struct Detection {
    Partition partition;
    double q_max = 0.0;  // top-level peak, max over connected components
};

namespace detail {
inline void split_recursively(const EpipolarGraph& g, const std::vector<NodeIndex>& to_root, double q_threshold,
                              std::vector<std::vector<NodeIndex>>& leaves, double* top_q) {
    const BestPartition best = best_partition(g, q_threshold);
    if (top_q) *top_q = std::max(*top_q, best.q_max);
    if (!best.significant) {
        leaves.push_back(to_root);
        return;
    }
    for (const auto& members : best.partition.communities()) {
        const Subgraph sub = induced_subgraph(g, members);
        std::vector<NodeIndex> mapped;
        for (NodeIndex v : sub.to_parent) mapped.push_back(to_root[v]);
        split_recursively(sub.graph, mapped, q_threshold, leaves, nullptr);
    }
}
}  // namespace detail

/// Splits into connected components, then divides each one until no piece
/// shows significant community structure. The threshold applies at every level.
inline Detection detect_communities(const EpipolarGraph& g, double q_threshold = 0.3) {
    Detection out;
    std::vector<std::vector<NodeIndex>> leaves;
    for (const auto& comp : connected_components(g)) {
        if (comp.size() == 1) {
            leaves.push_back(comp);
            continue;
        }
        const Subgraph sub = induced_subgraph(g, comp);
        detail::split_recursively(sub.graph, sub.to_parent, q_threshold, leaves, &out.q_max);
    }
    out.partition = Partition::from_communities(g.node_count(), std::move(leaves));
    return out;
}

inline Partition recursive_partition(const EpipolarGraph& g, double q_threshold = 0.3) {
    return detect_communities(g, q_threshold).partition;
}

inline CommunityGraph build_community_graph(const EpipolarGraph& g, const Partition& p) {
    detail::require_cover(g, p);
    CommunityGraph cg;
    cg.community_count = p.community_count();
    cg.sizes = p.sizes();
    for (const Edge& e : g.edges()) {
        CommunityId a = p[e.i], b = p[e.j];
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        cg.cross_edges[{a, b}] += 1;
    }
    return cg;
}

struct Absorption {
    Partition partition;
    std::vector<CommunityId> flagged_isolated;  // below min_size with no cross edges
};

/// Merges communities smaller than min_size into the neighbor they share the
/// most edges with, smallest community first, recounting after every merge.
inline Absorption absorb_small(const EpipolarGraph& g, const Partition& p, int min_size = 20) {
    detail::require_cover(g, p);
    std::vector<CommunityId> label = p.assignment();
    auto regroup = [&] {
        std::map<CommunityId, std::vector<NodeIndex>> groups;
        for (NodeIndex v = 0; v < g.node_count(); ++v) groups[label[v]].push_back(v);
        std::vector<std::vector<NodeIndex>> lists;
        for (auto& [c, members] : groups) lists.push_back(std::move(members));
        return Partition::from_communities(g.node_count(), std::move(lists));
    };
    while (true) {
        const Partition current = regroup();
        const CommunityGraph cg = build_community_graph(g, current);
        std::vector<std::map<CommunityId, int>> nbr(cg.community_count);
        for (const auto& [key, count] : cg.cross_edges) {
            nbr[key.first][key.second] = count;
            nbr[key.second][key.first] = count;
        }
        CommunityId small = -1;
        for (CommunityId c = 0; c < cg.community_count; ++c) {
            if (cg.sizes[c] >= min_size || nbr[c].empty()) continue;
            if (small < 0 || cg.sizes[c] < cg.sizes[small]) small = c;
        }
        if (small < 0) {
            Absorption out{current, {}};
            for (CommunityId c = 0; c < cg.community_count; ++c)
                if (cg.sizes[c] < min_size) out.flagged_isolated.push_back(c);
            return out;
        }
        CommunityId target = -1;
        int best = 0;
        for (const auto& [c, count] : nbr[small])
            if (count > best) best = count, target = c;
        label = current.assignment();
        for (CommunityId& c : label)
            if (c == small) c = target;
    }
}

}  // namespace csfm

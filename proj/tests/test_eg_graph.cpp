#include <sstream>

#include <gtest/gtest.h>

#include "csfm/eg_graph.hpp"

using namespace csfm;

TEST(EpipolarGraph, DegreeOfPathMiddle) {
    const EpipolarGraph g(3, {{0, 1}, {1, 2}});
    EXPECT_EQ(degree(g, 1), 2);
    EXPECT_EQ(degree(g, 0), 1);
    EXPECT_EQ(g.edge_count(), 2);
}

TEST(EpipolarGraph, RejectsSelfLoop) { EXPECT_THROW(EpipolarGraph(3, {{0, 0}}), ValidationError); }

TEST(EpipolarGraph, RejectsOutOfRange) {
    EXPECT_THROW(EpipolarGraph(3, {{0, 3}}), ValidationError);
    EXPECT_THROW(EpipolarGraph(3, {{-1, 1}}), ValidationError);
}

TEST(EpipolarGraph, RejectsDuplicateInEitherOrientation) {
    EXPECT_THROW(EpipolarGraph(3, {{0, 1}, {1, 0}}), ValidationError);
}

TEST(EpipolarGraph, RejectsNonPositiveWeight) { EXPECT_THROW(EpipolarGraph(2, {{0, 1, 0}}), ValidationError); }

TEST(EpipolarGraph, NeighborsSorted) {
    const EpipolarGraph g(4, {{0, 3}, {0, 1}, {2, 0}});
    EXPECT_EQ(g.neighbors(0), (std::vector<NodeIndex>{1, 2, 3}));
    EXPECT_THROW(g.neighbors(4), ValidationError);
}

TEST(EpipolarGraph, InducedSubgraphKeepsInternalEdges) {
    const EpipolarGraph g(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}});
    const Subgraph sub = induced_subgraph(g, {4, 0, 1});
    EXPECT_EQ(sub.graph.node_count(), 3);
    EXPECT_EQ(sub.graph.edge_count(), 2);  // 0-1 and 0-4
    EXPECT_EQ(sub.to_parent, (std::vector<NodeIndex>{0, 1, 4}));
    EXPECT_EQ(sub.graph.labels()[2], "4");
    EXPECT_THROW(induced_subgraph(g, {}), ValidationError);
}

TEST(EpipolarGraph, ConnectedComponentsOrderedBySmallestMember) {
    const EpipolarGraph g(6, {{5, 3}, {1, 2}, {0, 4}});
    const auto comps = connected_components(g);
    ASSERT_EQ(comps.size(), 3u);
    EXPECT_EQ(comps[0], (std::vector<NodeIndex>{0, 4}));
    EXPECT_EQ(comps[1], (std::vector<NodeIndex>{1, 2}));
    EXPECT_EQ(comps[2], (std::vector<NodeIndex>{3, 5}));
}

TEST(EpipolarGraph, JsonRoundTrip) {
    const EpipolarGraph g(std::vector<std::string>{"a", "b", "c"}, {{0, 1, 40}, {1, 2, 17}});
    std::stringstream ss(graph_to_json(g).dump());
    const EpipolarGraph back = load_graph(ss);
    EXPECT_EQ(back.labels(), g.labels());
    ASSERT_EQ(back.edge_count(), 2);
    EXPECT_EQ(back.edges()[1].weight, 17);
}

TEST(EpipolarGraph, JsonWeightDefaultsToOne) {
    std::stringstream ss(R"({"nodes":["x","y"],"edges":[{"i":0,"j":1}]})");
    EXPECT_EQ(load_graph(ss).edges()[0].weight, 1);
}

TEST(EpipolarGraph, MalformedJsonIsValidationError) {
    std::stringstream missing(R"({"nodes":["x","y"]})");
    EXPECT_THROW(load_graph(missing), ValidationError);
    std::stringstream garbage("{not json");
    EXPECT_THROW(load_graph(garbage), ValidationError);
}

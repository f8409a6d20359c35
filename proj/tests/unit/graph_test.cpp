#include <random>
#include <set>

#include <gtest/gtest.h>

#include "dcda/error.hpp"
#include "dcda/graph/graph.hpp"

namespace dcda {
namespace {

Vocabulary vocab(std::size_t a, std::size_t o) {
  Vocabulary v;
  for (std::size_t i = 0; i < a; ++i) v.attributes.push_back("a" + std::to_string(i));
  for (std::size_t i = 0; i < o; ++i) v.objects.push_back("o" + std::to_string(i));
  return v;
}

// Edge set from enumerating one triangle per composition; node ids follow
// the [attrs | objs | comps (sorted)] layout.
std::set<std::pair<std::size_t, std::size_t>> triangle_oracle(std::size_t n_attrs,
                                                             std::size_t n_objs,
                                                             std::vector<Composition> comps) {
  std::sort(comps.begin(), comps.end());
  std::set<std::pair<std::size_t, std::size_t>> edges;
  auto add = [&](std::size_t i, std::size_t j) { edges.insert({std::min(i, j), std::max(i, j)}); };
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const std::size_t a = comps[k].attr, o = n_attrs + comps[k].obj, c = n_attrs + n_objs + k;
    add(a, o);
    add(a, c);
    add(o, c);
  }
  return edges;
}

std::set<std::pair<std::size_t, std::size_t>> edges_of(const CompGraph& g) {
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    for (std::size_t j : g.neighbors(i)) {
      if (i < j) edges.insert({i, j});
    }
  }
  return edges;
}

TEST(CompGraph, SingleTriangle) {
  Vocabulary v{{"red"}, {"tomato"}};
  CompGraph g = build_compositional_graph(v, {{0, 0}});
  EXPECT_EQ(g.n_nodes(), 3u);
  EXPECT_EQ(g.edge_count(), 3u);
}

TEST(CompGraph, SevenNodeExample) {
  CompGraph g = build_compositional_graph(vocab(2, 2), {{0, 0}, {0, 1}, {1, 0}});
  EXPECT_EQ(g.n_nodes(), 7u);
  EXPECT_EQ(g.edge_count(), 9u);
  EXPECT_EQ(edges_of(g), triangle_oracle(2, 2, {{0, 0}, {0, 1}, {1, 0}}));
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    EXPECT_EQ(g.adjacency()(i, i), 0.0);
    for (std::size_t j = 0; j < g.n_nodes(); ++j) {
      EXPECT_EQ(g.adjacency()(i, j), g.adjacency()(j, i));
    }
  }
  for (const auto& c : g.compositions()) EXPECT_EQ(g.degree(g.comp_node(c)), 2u);
}

TEST(CompGraph, MitStatesTrainingGraphSize) {
  Vocabulary v = vocab(115, 245);
  std::set<Composition> unique;
  std::mt19937_64 rng(2);
  while (unique.size() < 1262) unique.insert({rng() % 115, rng() % 245});
  std::vector<Composition> comps(unique.begin(), unique.end());
  EXPECT_EQ(build_compositional_graph(v, comps).n_nodes(), 1622u);
}

TEST(CompGraph, RejectsDuplicatesAndEmpty) {
  EXPECT_THROW(build_compositional_graph(vocab(2, 2), {}), InvariantError);
  EXPECT_THROW(build_compositional_graph(vocab(2, 2), {{0, 0}, {0, 0}}), InvariantError);
  EXPECT_THROW(build_compositional_graph(vocab(2, 2), {{2, 0}}), InvariantError);
}

TEST(CompGraph, OrderIndependent) {
  std::vector<Composition> comps{{1, 2}, {0, 0}, {2, 1}, {0, 2}};
  CompGraph g1 = build_compositional_graph(vocab(3, 3), comps);
  std::reverse(comps.begin(), comps.end());
  CompGraph g2 = build_compositional_graph(vocab(3, 3), comps);
  EXPECT_EQ(g1.adjacency(), g2.adjacency());
  EXPECT_EQ(g1.compositions(), g2.compositions());
}

TEST(CompGraph, TestGraphContainsTrainingGraph) {
  Vocabulary v = vocab(3, 4);
  std::vector<Composition> train{{0, 0}, {1, 1}, {2, 2}, {0, 3}};
  std::vector<Composition> test = train;
  test.insert(test.end(), {{1, 0}, {2, 3}});
  CompGraph gs = build_compositional_graph(v, train);
  CompGraph gt = build_compositional_graph(v, test);
  auto map_node = [&](std::size_t i) {
    const NodeRef r = gs.node_ref(i);
    switch (r.kind) {
      case NodeKind::attribute: return gt.attr_node(r.id);
      case NodeKind::object: return gt.obj_node(r.id);
      default: return gt.comp_node(gs.compositions()[r.id]);
    }
  };
  for (auto [i, j] : edges_of(gs)) {
    EXPECT_EQ(gt.adjacency()(map_node(i), map_node(j)), 1.0);
  }
}

TEST(Relevance, HandExample) {
  RelevanceMatrices r = relevance_matrices(vocab(2, 2), {{0, 0}, {0, 1}, {1, 0}});
  EXPECT_EQ(r.obj, Matrix::from_rows({{2, 1}, {1, 1}}));
  EXPECT_EQ(r.att, Matrix::from_rows({{2, 1}, {1, 1}}));
}

TEST(Relevance, SingleComposition) {
  RelevanceMatrices r = relevance_matrices(Vocabulary{{"x"}, {"y"}}, {{0, 0}});
  EXPECT_EQ(r.obj, Matrix::from_rows({{1}}));
}

TEST(Relevance, RedTomatoAndRedApple) {
  Vocabulary v{{"red", "green"}, {"tomato", "apple"}};
  RelevanceMatrices r = relevance_matrices(v, {{0, 0}, {0, 1}});
  EXPECT_GE(r.obj(0, 1), 1.0);
}

TEST(Relevance, MatchesBruteForceOnRandomVocabularies) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t A = 1 + rng() % 6, O = 1 + rng() % 6;
    std::vector<Composition> seen;
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t o = 0; o < O; ++o)
        if (rng() % 2) seen.push_back({a, o});
    RelevanceMatrices r = relevance_matrices(vocab(A, O), seen);
    auto has = [&](std::size_t a, std::size_t o) {
      return std::find(seen.begin(), seen.end(), Composition{a, o}) != seen.end();
    };
    for (std::size_t i = 0; i < O; ++i) {
      for (std::size_t j = 0; j < O; ++j) {
        double shared = 0;
        for (std::size_t a = 0; a < A; ++a) shared += has(a, i) && has(a, j);
        EXPECT_EQ(r.obj(i, j), shared);
      }
    }
    for (std::size_t i = 0; i < A; ++i) {
      for (std::size_t j = 0; j < A; ++j) {
        double shared = 0;
        for (std::size_t o = 0; o < O; ++o) shared += has(i, o) && has(j, o);
        EXPECT_EQ(r.att(i, j), shared);
      }
    }
  }
}

TEST(NormalizedAdjacency, IsolatedNodeKeepsItsSelfLoop) {
  // attribute 1 and object 1 are in no composition
  CompGraph g = build_compositional_graph(vocab(2, 2), {{0, 0}});
  Matrix n = normalized_adjacency(g);
  const std::size_t iso = g.attr_node(1);
  for (std::size_t j = 0; j < g.n_nodes(); ++j) EXPECT_EQ(n(iso, j), j == iso ? 1.0 : 0.0);
}

TEST(NormalizedAdjacency, TriangleIsOneThirdEverywhere) {
  CompGraph g = build_compositional_graph(Vocabulary{{"a"}, {"o"}}, {{0, 0}});
  Matrix n = normalized_adjacency(g);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(n(i, j), 1.0 / 3.0, 1e-15);
}

TEST(NormalizedAdjacency, IsSymmetric) {
  CompGraph g = build_compositional_graph(vocab(2, 2), {{0, 0}, {0, 1}, {1, 0}});
  Matrix n = normalized_adjacency(g);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(n(i, j), n(j, i));
}

TEST(GraphReport, EdgeCsvAndHistogram) {
  Vocabulary v{{"red"}, {"tomato"}};
  CompGraph g = build_compositional_graph(v, {{0, 0}});
  EXPECT_EQ(edge_list_csv(g, v),
            "src,dst,src_label,dst_label\n0,1,red,tomato\n0,2,red,red tomato\n"
            "1,2,tomato,red tomato\n");
  auto hist = degree_histogram(g);
  EXPECT_EQ(hist.size(), 1u);
  EXPECT_EQ(hist[2], 3u);
}

}  // namespace
}  // namespace dcda

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "dcda/backbone/encoder.hpp"
#include "dcda/backbone/parameters.hpp"
#include "dcda/graph/graph.hpp"
#include "dcda/numerics/ops.hpp"

namespace dcda {

// EOT embedding of one node's prompt, keyed by what the node stands for
// rather than by its row.
struct PromptEncoding {
  NodeKind kind = NodeKind::attribute;
  std::size_t attr = 0;  // ignored for object nodes
  std::size_t obj = 0;   // ignored for attribute nodes
  Matrix eot;            // 1 x d
};

// N x d features in node order. Every node needs exactly one encoding.
Matrix init_node_features(const CompGraph& graph, const std::vector<PromptEncoding>& encodings);

// sigma(norm_adj * X * W), sigma = relu when `activate`, identity otherwise.
Var gnn_layer(Var features, Var norm_adj, Var weight, bool activate);

// K layers; relu on all but the last.
Var gnn_forward(Var features, Var norm_adj, const std::vector<Var>& weights);

// Gathers the EOT rows of every node prompt out of the row-stacked text
// hidden state, propagates them, and adds the result back (skip).
Var l_adapter_forward(Var hidden, const std::vector<std::size_t>& eot_rows, Var norm_adj,
                      const std::vector<Var>& weights);

struct TripleFeatures {
  Var attr;
  Var obj;
  Var comp;
};

// (a, o, c) rows of node-ordered features. Throws if c is not in the graph.
TripleFeatures l_adapter_triple(Var node_features, const CompGraph& graph,
                                const Composition& c);

std::string l_adapter_param(std::size_t block, Slot slot, std::size_t layer);

// Hidden layers ~ N(0, 1/d); the last is further scaled by `last_scale`.
void add_l_adapter_params(ParameterStore& store, std::size_t block, Slot slot,
                          std::size_t dim, std::size_t layers, double last_scale,
                          std::mt19937_64& rng);

}  // namespace dcda

#include "dcda/l_adapter/l_adapter.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {

Matrix init_node_features(const CompGraph& graph, const std::vector<PromptEncoding>& encodings) {
  if (encodings.empty()) throw DimensionError("no prompt encodings");
  std::size_t d = encodings.front().eot.cols();
  Matrix out(graph.n_nodes(), d);
  std::vector<bool> filled(graph.n_nodes(), false);
  for (const auto& e : encodings) {
    if (e.eot.rows() != 1 || e.eot.cols() != d) {
      throw DimensionError(fmt::format("prompt encoding shape {} is not 1x{}",
                                       e.eot.shape_string(), d));
    }
    std::size_t node = 0;
    switch (e.kind) {
      case NodeKind::attribute: node = graph.attr_node(e.attr); break;
      case NodeKind::object: node = graph.obj_node(e.obj); break;
      case NodeKind::composition: node = graph.comp_node({e.attr, e.obj}); break;
    }
    if (filled[node]) throw InvariantError(fmt::format("node {} encoded twice", node));
    filled[node] = true;
    out.eigen().row(static_cast<Eigen::Index>(node)) = e.eot.eigen();
  }
  for (std::size_t n = 0; n < filled.size(); ++n) {
    if (!filled[n]) throw InvariantError(fmt::format("missing prompt encoding for node {}", n));
  }
  return out;
}

Var gnn_layer(Var features, Var norm_adj, Var weight, bool activate) {
  if (norm_adj.rows() != norm_adj.cols() || norm_adj.cols() != features.rows()) {
    throw DimensionError(fmt::format("adjacency {} does not match {} node rows",
                                     norm_adj.value().shape_string(), features.rows()));
  }
  Var out = matmul(norm_adj, matmul(features, weight));
  return activate ? relu(out) : out;
}

Var gnn_forward(Var features, Var norm_adj, const std::vector<Var>& weights) {
  if (weights.empty()) throw ConfigError("GNN needs at least one layer");
  for (std::size_t k = 0; k < weights.size(); ++k) {
    features = gnn_layer(features, norm_adj, weights[k], k + 1 < weights.size());
  }
  return features;
}

Var l_adapter_forward(Var hidden, const std::vector<std::size_t>& eot_rows, Var norm_adj,
                      const std::vector<Var>& weights) {
  if (eot_rows.size() != norm_adj.rows()) {
    throw DimensionError(fmt::format("{} prompt rows for a {}-node graph", eot_rows.size(),
                                     norm_adj.rows()));
  }
  Var nodes = gather_rows(hidden, eot_rows);
  return scatter_add_rows(hidden, eot_rows, gnn_forward(nodes, norm_adj, weights));
}

TripleFeatures l_adapter_triple(Var node_features, const CompGraph& graph,
                                const Composition& c) {
  if (node_features.rows() != graph.n_nodes()) {
    throw DimensionError("node features do not match the graph");
  }
  std::size_t cn = graph.comp_node(c);
  return {gather_rows(node_features, {graph.attr_node(c.attr)}),
          gather_rows(node_features, {graph.obj_node(c.obj)}),
          gather_rows(node_features, {cn})};
}

std::string l_adapter_param(std::size_t block, Slot slot, std::size_t layer) {
  return fmt::format("l_adapter.b{}.s{}.w{}", block, to_string(slot), layer);
}

void add_l_adapter_params(ParameterStore& store, std::size_t block, Slot slot,
                          std::size_t dim, std::size_t layers, double last_scale,
                          std::mt19937_64& rng) {
  double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t k = 0; k < layers; ++k) {
    std::normal_distribution<double> n(0.0, k + 1 == layers ? sd * last_scale : sd);
    Matrix w(dim, dim);
    for (double& x : w.data()) x = n(rng);
    store.add(l_adapter_param(block, slot, k), std::move(w), false);
  }
}

}  // namespace dcda

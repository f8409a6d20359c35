#include "dcda/graph/graph.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {

std::size_t CompGraph::attr_node(std::size_t a) const {
  if (a >= n_attrs_) throw InvariantError(fmt::format("attribute {} not in graph", a));
  return a;
}

std::size_t CompGraph::obj_node(std::size_t o) const {
  if (o >= n_objs_) throw InvariantError(fmt::format("object {} not in graph", o));
  return n_attrs_ + o;
}

std::size_t CompGraph::comp_node(const Composition& c) const {
  auto it = comp_pos_.find(c);
  if (it == comp_pos_.end()) {
    throw InvariantError(fmt::format("composition ({}, {}) not in graph", c.attr, c.obj));
  }
  return n_attrs_ + n_objs_ + it->second;
}

bool CompGraph::has_composition(const Composition& c) const { return comp_pos_.count(c) > 0; }

NodeRef CompGraph::node_ref(std::size_t node) const {
  if (node < n_attrs_) return {NodeKind::attribute, node};
  if (node < n_attrs_ + n_objs_) return {NodeKind::object, node - n_attrs_};
  if (node < n_nodes()) return {NodeKind::composition, node - n_attrs_ - n_objs_};
  throw InvariantError(fmt::format("node {} out of range ({} nodes)", node, n_nodes()));
}

CompGraph build_compositional_graph(const Vocabulary& vocab, std::vector<Composition> comps) {
  if (comps.empty()) throw InvariantError("compositional graph needs at least one composition");
  std::sort(comps.begin(), comps.end());
  if (auto dup = std::adjacent_find(comps.begin(), comps.end()); dup != comps.end()) {
    throw InvariantError(
        fmt::format("duplicate composition ({}, {})", dup->attr, dup->obj));
  }
  for (const auto& c : comps) {
    if (c.attr >= vocab.n_attrs() || c.obj >= vocab.n_objs()) {
      throw InvariantError(
          fmt::format("composition ({}, {}) out of vocabulary bounds", c.attr, c.obj));
    }
  }
  CompGraph g;
  g.n_attrs_ = vocab.n_attrs();
  g.n_objs_ = vocab.n_objs();
  g.comps_ = std::move(comps);
  for (std::size_t i = 0; i < g.comps_.size(); ++i) g.comp_pos_[g.comps_[i]] = i;

  const std::size_t n = g.n_nodes();
  g.adjacency_ = Matrix(n, n, 0.0);
  auto connect = [&g](std::size_t i, std::size_t j) {
    g.adjacency_(i, j) = 1.0;
    g.adjacency_(j, i) = 1.0;
  };
  for (const auto& c : g.comps_) {
    const std::size_t a = g.attr_node(c.attr), o = g.obj_node(c.obj), cn = g.comp_node(c);
    connect(a, o);
    connect(a, cn);
    connect(o, cn);
  }
  g.neighbors_.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (g.adjacency_(i, j) != 0.0) {
        g.neighbors_[i].push_back(j);
        if (i < j) ++g.edge_count_;
      }
    }
  }
  return g;
}

RelevanceMatrices relevance_matrices(const Vocabulary& vocab,
                                     const std::vector<Composition>& seen) {
  RelevanceMatrices rel;
  rel.att_obj = Matrix(vocab.n_attrs(), vocab.n_objs(), 0.0);
  for (const auto& c : seen) {
    if (c.attr >= vocab.n_attrs() || c.obj >= vocab.n_objs()) {
      throw InvariantError(
          fmt::format("composition ({}, {}) out of vocabulary bounds", c.attr, c.obj));
    }
    rel.att_obj(c.attr, c.obj) = 1.0;
  }
  const RowMajorXd& m = rel.att_obj.eigen();
  rel.obj = Matrix(RowMajorXd(m.transpose() * m));
  rel.att = Matrix(RowMajorXd(m * m.transpose()));
  return rel;
}

Matrix normalized_adjacency(const CompGraph& graph) {
  const auto n = static_cast<Eigen::Index>(graph.n_nodes());
  RowMajorXd a_hat = graph.adjacency().eigen() + RowMajorXd::Identity(n, n);
  Eigen::VectorXd inv_sqrt_deg = a_hat.rowwise().sum().cwiseSqrt().cwiseInverse();
  return Matrix(RowMajorXd(inv_sqrt_deg.asDiagonal() * a_hat * inv_sqrt_deg.asDiagonal()));
}

std::string node_label(const CompGraph& graph, const Vocabulary& vocab, std::size_t node) {
  const NodeRef ref = graph.node_ref(node);
  switch (ref.kind) {
    case NodeKind::attribute: return vocab.attributes.at(ref.id);
    case NodeKind::object: return vocab.objects.at(ref.id);
    case NodeKind::composition: return to_string(graph.compositions()[ref.id], vocab);
  }
  return {};
}

std::map<std::size_t, std::size_t> degree_histogram(const CompGraph& graph) {
  std::map<std::size_t, std::size_t> hist;
  for (std::size_t i = 0; i < graph.n_nodes(); ++i) ++hist[graph.degree(i)];
  return hist;
}

std::string edge_list_csv(const CompGraph& graph, const Vocabulary& vocab) {
  std::string out = "src,dst,src_label,dst_label\n";
  for (std::size_t i = 0; i < graph.n_nodes(); ++i) {
    for (std::size_t j : graph.neighbors(i)) {
      if (j <= i) continue;
      out += fmt::format("{},{},{},{}\n", i, j, node_label(graph, vocab, i),
                         node_label(graph, vocab, j));
    }
  }
  return out;
}

}  // namespace dcda

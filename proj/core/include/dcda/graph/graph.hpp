#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dcda/dataset/dataset.hpp"
#include "dcda/numerics/matrix.hpp"

namespace dcda {

enum class NodeKind { attribute, object, composition };

struct NodeRef {
  NodeKind kind;
  std::size_t id;  // attribute index, object index, or position in compositions()
};

// Undirected, unweighted graph over attribute, object and composition nodes.
// Every composition (a, o) contributes the triangle a-o, a-c, o-c. Node rows
// are laid out as [attributes | objects | compositions], compositions sorted.
class CompGraph {
 public:
  std::size_t n_nodes() const { return n_attrs_ + n_objs_ + comps_.size(); }
  std::size_t n_attrs() const { return n_attrs_; }
  std::size_t n_objs() const { return n_objs_; }
  const std::vector<Composition>& compositions() const { return comps_; }

  const Matrix& adjacency() const { return adjacency_; }
  const std::vector<std::size_t>& neighbors(std::size_t node) const {
    return neighbors_.at(node);
  }
  std::size_t degree(std::size_t node) const { return neighbors(node).size(); }
  std::size_t edge_count() const { return edge_count_; }

  std::size_t attr_node(std::size_t a) const;
  std::size_t obj_node(std::size_t o) const;
  std::size_t comp_node(const Composition& c) const;  // throws if absent
  bool has_composition(const Composition& c) const;
  NodeRef node_ref(std::size_t node) const;

 private:
  friend CompGraph build_compositional_graph(const Vocabulary&, std::vector<Composition>);

  std::size_t n_attrs_ = 0;
  std::size_t n_objs_ = 0;
  std::vector<Composition> comps_;
  std::map<Composition, std::size_t> comp_pos_;
  Matrix adjacency_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::size_t edge_count_ = 0;
};

// Rejects an empty set, duplicates, and out-of-vocabulary indices. The
// result does not depend on the order of `comps`.
CompGraph build_compositional_graph(const Vocabulary& vocab, std::vector<Composition> comps);

// Integer co-occurrence counts derived from the seen pairs:
// obj = att_obj^T att_obj, att = att_obj att_obj^T.
struct RelevanceMatrices {
  Matrix att_obj;  // |A| x |O|, 1 where (a, o) is seen
  Matrix obj;      // |O| x |O|, shared attribute counts
  Matrix att;      // |A| x |A|, shared object counts
};

RelevanceMatrices relevance_matrices(const Vocabulary& vocab,
                                     const std::vector<Composition>& seen);

// D^{-1/2} (A + I) D^{-1/2}, D the degree matrix of A + I.
Matrix normalized_adjacency(const CompGraph& graph);

std::string node_label(const CompGraph& graph, const Vocabulary& vocab, std::size_t node);

// degree -> number of nodes with that degree
std::map<std::size_t, std::size_t> degree_histogram(const CompGraph& graph);

// "src,dst,src_label,dst_label" rows, src < dst, with a header line.
std::string edge_list_csv(const CompGraph& graph, const Vocabulary& vocab);

}  // namespace dcda

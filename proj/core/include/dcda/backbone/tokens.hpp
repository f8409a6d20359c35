#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dcda/dataset/dataset.hpp"
#include "dcda/graph/graph.hpp"
#include "dcda/numerics/ops.hpp"

namespace dcda {

// Closed token set: the template words, the "object" filler, EOT, then one
// token per attribute and per object.
class TokenVocabulary {
 public:
  static constexpr std::size_t kA = 0;
  static constexpr std::size_t kPhoto = 1;
  static constexpr std::size_t kOf = 2;
  static constexpr std::size_t kObjectFiller = 3;
  static constexpr std::size_t kEot = 4;
  static constexpr std::size_t kFixed = 5;

  explicit TokenVocabulary(const Vocabulary& vocab);

  std::size_t size() const { return kFixed + n_attrs_ + n_objs_; }
  std::size_t n_attrs() const { return n_attrs_; }
  std::size_t n_objs() const { return n_objs_; }
  std::size_t attr_token(std::size_t a) const;
  std::size_t obj_token(std::size_t o) const;
  const std::string& name(std::size_t token) const { return names_.at(token); }

 private:
  std::size_t n_attrs_;
  std::size_t n_objs_;
  std::vector<std::string> names_;
};

struct PromptTriple {
  std::vector<std::size_t> comp_tokens;  // a photo of [attr] [obj] EOT
  std::vector<std::size_t> attr_tokens;  // a photo of [attr] object EOT
  std::vector<std::size_t> obj_tokens;   // a photo of [obj] EOT
  std::size_t comp_eot = 0;
  std::size_t attr_eot = 0;
  std::size_t obj_eot = 0;
};

PromptTriple assemble_prompts(const TokenVocabulary& tokens, std::size_t a, std::size_t o);

// Prompts row-stacked for one encoder pass: one sequence per graph node in
// node order (attributes, objects, compositions).
struct PackedPrompts {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> positions;
  std::vector<Segment> segments;
  std::vector<std::size_t> eot_rows;  // per node
};

PackedPrompts pack_graph_prompts(const CompGraph& graph, const TokenVocabulary& tokens,
                                 std::size_t max_len);

}  // namespace dcda

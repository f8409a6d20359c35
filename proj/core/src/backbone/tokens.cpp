#include "dcda/backbone/tokens.hpp"

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {

TokenVocabulary::TokenVocabulary(const Vocabulary& vocab)
    : n_attrs_(vocab.attributes.size()), n_objs_(vocab.objects.size()) {
  names_ = {"a", "photo", "of", "object", "<eot>"};
  names_.insert(names_.end(), vocab.attributes.begin(), vocab.attributes.end());
  names_.insert(names_.end(), vocab.objects.begin(), vocab.objects.end());
}

std::size_t TokenVocabulary::attr_token(std::size_t a) const {
  if (a >= n_attrs_) throw DimensionError(fmt::format("attribute id {} out of range", a));
  return kFixed + a;
}

std::size_t TokenVocabulary::obj_token(std::size_t o) const {
  if (o >= n_objs_) throw DimensionError(fmt::format("object id {} out of range", o));
  return kFixed + n_attrs_ + o;
}

PromptTriple assemble_prompts(const TokenVocabulary& tokens, std::size_t a, std::size_t o) {
  using T = TokenVocabulary;
  std::size_t at = tokens.attr_token(a);
  std::size_t ot = tokens.obj_token(o);
  PromptTriple p;
  p.comp_tokens = {T::kA, T::kPhoto, T::kOf, at, ot, T::kEot};
  p.attr_tokens = {T::kA, T::kPhoto, T::kOf, at, T::kObjectFiller, T::kEot};
  p.obj_tokens = {T::kA, T::kPhoto, T::kOf, ot, T::kEot};
  p.comp_eot = p.comp_tokens.size() - 1;
  p.attr_eot = p.attr_tokens.size() - 1;
  p.obj_eot = p.obj_tokens.size() - 1;
  return p;
}

PackedPrompts pack_graph_prompts(const CompGraph& graph, const TokenVocabulary& tokens,
                                 std::size_t max_len) {
  if (graph.n_attrs() != tokens.n_attrs() || graph.n_objs() != tokens.n_objs()) {
    throw DimensionError("graph and token vocabulary disagree on primitive counts");
  }
  PackedPrompts packed;
  auto push = [&](const std::vector<std::size_t>& seq) {
    if (seq.size() > max_len) {
      throw ConfigError(fmt::format("prompt of length {} exceeds l = {}", seq.size(), max_len));
    }
    Segment seg{packed.tokens.size(), seq.size()};
    for (std::size_t i = 0; i < seq.size(); ++i) {
      packed.tokens.push_back(seq[i]);
      packed.positions.push_back(i);
    }
    packed.segments.push_back(seg);
    packed.eot_rows.push_back(seg.offset + seg.length - 1);
  };
  for (std::size_t a = 0; a < graph.n_attrs(); ++a) push(assemble_prompts(tokens, a, 0).attr_tokens);
  for (std::size_t o = 0; o < graph.n_objs(); ++o) push(assemble_prompts(tokens, 0, o).obj_tokens);
  for (const auto& c : graph.compositions()) push(assemble_prompts(tokens, c.attr, c.obj).comp_tokens);
  return packed;
}

}  // namespace dcda

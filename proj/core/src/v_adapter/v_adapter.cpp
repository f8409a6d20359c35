#include "dcda/v_adapter/v_adapter.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {
namespace {

Var feed_forward(Var x, const VBranchParams& p) {
  Var h = relu(add_row_broadcast(matmul(x, p.w1), p.b1));
  return add(x, add_row_broadcast(matmul(h, p.w2), p.b2));
}

Var attend(Var query_src, Var kv_src, const VBranchParams& p,
           const std::vector<Segment>& segments) {
  double scale = 1.0 / std::sqrt(static_cast<double>(query_src.cols()));
  Var att = segmented_attention(matmul(query_src, p.wq), matmul(kv_src, p.wk),
                                matmul(kv_src, p.wv), segments, segments, false, scale);
  return feed_forward(att, p);
}

}  // namespace

CrossAttentionResult cross_attention_pair(Var target, Var aux, const VBranchParams& p,
                                          const std::vector<Segment>& segments) {
  if (target.rows() != aux.rows() || target.cols() != aux.cols()) {
    throw DimensionError(fmt::format("target {} and auxiliary {} differ in shape",
                                     target.value().shape_string(),
                                     aux.value().shape_string()));
  }
  if (p.wq.rows() != target.cols()) {
    throw DimensionError(fmt::format("projection {} does not match width {}",
                                     p.wq.value().shape_string(), target.cols()));
  }
  CrossAttentionResult r;
  r.refined_target = attend(aux, target, p, segments);
  bool same = aux.tape() == target.tape() && aux.id() == target.id();
  r.refined_aux = same ? r.refined_target : attend(target, aux, p, segments);
  return r;
}

DisentangledImageFeatures v_adapter_forward(Var target, Var aux_attr, Var aux_obj,
                                            const VBranchParams& attr,
                                            const VBranchParams& obj,
                                            const std::vector<Segment>& segments) {
  CrossAttentionResult a = cross_attention_pair(target, aux_attr, attr, segments);
  CrossAttentionResult o = cross_attention_pair(target, aux_obj, obj, segments);
  DisentangledImageFeatures out;
  out.h_attr = a.refined_target;
  out.h_obj = o.refined_target;
  out.combined = add(out.h_attr, out.h_obj);
  out.refined_aux_attr = a.refined_aux;
  out.refined_aux_obj = o.refined_aux;
  out.target_out = add(target, out.combined);
  return out;
}

std::string v_adapter_param(std::size_t block, Slot slot, std::string_view branch,
                            std::string_view what) {
  return fmt::format("v_adapter.b{}.s{}.{}.{}", block, to_string(slot), branch, what);
}

void add_v_adapter_params(ParameterStore& store, std::size_t block, Slot slot,
                          std::size_t dim, std::size_t ff_mult, double init_scale,
                          std::mt19937_64& rng) {
  std::size_t h = dim * ff_mult;
  auto gaussian = [&](std::size_t r, std::size_t c, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(r, c);
    for (double& x : m.data()) x = n(rng);
    return m;
  };
  double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  for (const char* branch : {"attr", "obj"}) {
    auto name = [&](const char* w) { return v_adapter_param(block, slot, branch, w); };
    store.add(name("wq"), gaussian(dim, dim, sd), false);
    store.add(name("wk"), gaussian(dim, dim, sd), false);
    store.add(name("wv"), gaussian(dim, dim, sd * init_scale), false);
    store.add(name("w1"), gaussian(dim, h, sd), false);
    store.add(name("b1"), Matrix(1, h), false);
    store.add(name("w2"), gaussian(h, dim, init_scale / std::sqrt(static_cast<double>(h))),
              false);
    store.add(name("b2"), Matrix(1, dim), false);
  }
}

VBranchParams bind_v_branch(ParamBinding& params, std::size_t block, Slot slot,
                            std::string_view branch) {
  auto g = [&](const char* w) { return params.get(v_adapter_param(block, slot, branch, w)); };
  return {g("wq"), g("wk"), g("wv"), g("w1"), g("b1"), g("w2"), g("b2")};
}

}  // namespace dcda

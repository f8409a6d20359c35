#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "dcda/backbone/encoder.hpp"
#include "dcda/backbone/parameters.hpp"
#include "dcda/numerics/ops.hpp"

namespace dcda {

// One branch (attribute or object) at one insertion site. The swapped
// direction reuses the same projections.
struct VBranchParams {
  Var wq, wk, wv;
  Var w1, b1, w2, b2;  // feed-forward with residual, d' -> h -> d'
};

struct CrossAttentionResult {
  Var refined_target;
  Var refined_aux;
};

// Inputs are row-stacked batches of equal-length sequences; attention stays
// within matching segments.
//   refined_target = FF(softmax((aux Wq)(target Wk)^T / sqrt(d')) (target Wv))
//   refined_aux    = FF(softmax((target Wq)(aux Wk)^T / sqrt(d')) (aux Wv))
// where FF(x) = x + relu(x W1 + b1) W2 + b2. When aux and target are the same
// Var the second direction is not recomputed.
CrossAttentionResult cross_attention_pair(Var target, Var aux, const VBranchParams& p,
                                          const std::vector<Segment>& segments);

struct DisentangledImageFeatures {
  Var h_attr;            // target refined against the attribute-sharing image
  Var h_obj;             // target refined against the object-sharing image
  Var combined;          // h_attr + h_obj
  Var refined_aux_attr;
  Var refined_aux_obj;
  Var target_out;        // target + combined
};

DisentangledImageFeatures v_adapter_forward(Var target, Var aux_attr, Var aux_obj,
                                            const VBranchParams& attr,
                                            const VBranchParams& obj,
                                            const std::vector<Segment>& segments);

std::string v_adapter_param(std::size_t block, Slot slot, std::string_view branch,
                            std::string_view what);

// Q/K ~ N(0, 1/d); V and the FF output layer additionally scaled by
// `init_scale` so the adapter starts close to its skip path.
void add_v_adapter_params(ParameterStore& store, std::size_t block, Slot slot,
                          std::size_t dim, std::size_t ff_mult, double init_scale,
                          std::mt19937_64& rng);

VBranchParams bind_v_branch(ParamBinding& params, std::size_t block, Slot slot,
                            std::string_view branch);

}  // namespace dcda

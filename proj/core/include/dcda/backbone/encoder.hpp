#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dcda/backbone/parameters.hpp"
#include "dcda/backbone/tokens.hpp"
#include "dcda/numerics/ops.hpp"

namespace dcda {

// Adapter insertion points inside one block.
enum class Slot { after_block = 1, after_ff = 2, after_attn = 3 };

std::string_view to_string(Slot s);
Slot slot_from_string(std::string_view s);

struct BackboneConfig {
  std::size_t blocks = 6;
  std::size_t text_dim = 32;
  std::size_t image_dim = 32;
  std::size_t text_len = 8;
  std::size_t image_len = 8;
  std::size_t raw_dim = 16;
  std::size_t ff_mult = 2;
  std::uint64_t seed = 1234;

  void validate() const;
};

enum class Tower { text, image };

std::string block_param(Tower tower, std::size_t block, std::string_view what);

// Adds the frozen weights of both towers plus the trainable token table.
void init_backbone(ParameterStore& store, const BackboneConfig& config,
                   std::size_t token_count);

// Called at each slot with that unit's output. The hook returns what is
// passed on; adapters apply their own skip (X + F(X)). Identity when empty.
using SlotHook = std::function<Var(std::size_t block, Slot slot, Var x)>;

// Pre-norm block:
//   h1 = h + S3(attn(LN(h)));  h2 = h1 + S2(ff(LN(h1)));  out = S1(h2)
Var encoder_block(ParamBinding& params, const BackboneConfig& config, Tower tower,
                  std::size_t block, Var hidden, const std::vector<Segment>& segments,
                  const SlotHook& hook);

// Runs blocks [first, end) and appends each block's output to `per_block`
// when given.
Var run_blocks(ParamBinding& params, const BackboneConfig& config, Tower tower,
               Var hidden, const std::vector<Segment>& segments, std::size_t first,
               std::size_t end, const SlotHook& hook, std::vector<Var>* per_block = nullptr);

Var embed_text(ParamBinding& params, const PackedPrompts& prompts);

// `raw` stacks n images of image_len tokens each.
Var embed_image(ParamBinding& params, const BackboneConfig& config, const Matrix& raw);

std::vector<Segment> image_segments(const BackboneConfig& config, std::size_t n_images);

// Per-block hidden states (causal attention within each prompt).
std::vector<Var> encode_text(ParamBinding& params, const BackboneConfig& config,
                             const PackedPrompts& prompts, const SlotHook& hook = {});

std::vector<Var> encode_image(ParamBinding& params, const BackboneConfig& config,
                              const Matrix& raw, const SlotHook& hook = {});

// Frozen forward of blocks [0, end) with no adapters, off-tape. Used to
// cache the image prefix that precedes the first adapter block.
Matrix image_prefix(const ParameterStore& store, const BackboneConfig& config,
                    const Matrix& raw, std::size_t end);

// Last token of every image in a row-stacked batch.
std::vector<std::size_t> image_summary_rows(const BackboneConfig& config,
                                            std::size_t n_images);

// Summary vectors: selected rows, layer-normalized.
Var summarize(Var hidden, std::vector<std::size_t> rows);

}  // namespace dcda

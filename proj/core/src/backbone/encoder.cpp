#include "dcda/backbone/encoder.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {
namespace {

std::string_view tower_name(Tower t) { return t == Tower::text ? "text" : "image"; }

Matrix gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = n(rng);
  return m;
}

std::size_t dim(const BackboneConfig& c, Tower t) {
  return t == Tower::text ? c.text_dim : c.image_dim;
}

}  // namespace

std::string_view to_string(Slot s) {
  switch (s) {
    case Slot::after_block: return "1";
    case Slot::after_ff: return "2";
    case Slot::after_attn: return "3";
  }
  return "?";
}

Slot slot_from_string(std::string_view s) {
  if (s == "1" || s == "after_block") return Slot::after_block;
  if (s == "2" || s == "after_ff") return Slot::after_ff;
  if (s == "3" || s == "after_attn") return Slot::after_attn;
  throw ConfigError(fmt::format("unknown adapter slot '{}'", s));
}

void BackboneConfig::validate() const {
  if (blocks == 0) throw ConfigError("backbone needs at least one block");
  if (text_dim == 0 || image_dim == 0 || raw_dim == 0 || ff_mult == 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (text_len < 6) throw ConfigError("text_len must fit the 6-token composition prompt");
  if (image_len == 0) throw ConfigError("image_len must be positive");
}

std::string block_param(Tower tower, std::size_t block, std::string_view what) {
  return fmt::format("{}.b{}.{}", tower_name(tower), block, what);
}

void init_backbone(ParameterStore& store, const BackboneConfig& config,
                   std::size_t token_count) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  store.add("text.tok_emb", gaussian(rng, token_count, config.text_dim, 1.0), false);
  store.add("text.pos", gaussian(rng, config.text_len, config.text_dim, 0.1), true);
  store.add("image.proj",
            gaussian(rng, config.raw_dim, config.image_dim, 1.0 / std::sqrt(config.raw_dim)),
            true);
  store.add("image.pos", gaussian(rng, config.image_len, config.image_dim, 0.1), true);
  for (Tower t : {Tower::text, Tower::image}) {
    std::size_t d = dim(config, t);
    std::size_t h = d * config.ff_mult;
    double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t b = 0; b < config.blocks; ++b) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        store.add(block_param(t, b, w), gaussian(rng, d, d, sd), true);
      }
      store.add(block_param(t, b, "w1"), gaussian(rng, d, h, sd), true);
      store.add(block_param(t, b, "b1"), gaussian(rng, 1, h, 0.1), true);
      store.add(block_param(t, b, "w2"),
                gaussian(rng, h, d, 1.0 / std::sqrt(static_cast<double>(h))), true);
      store.add(block_param(t, b, "b2"), gaussian(rng, 1, d, 0.1), true);
    }
  }
}

Var encoder_block(ParamBinding& params, const BackboneConfig& config, Tower tower,
                  std::size_t block, Var hidden, const std::vector<Segment>& segments,
                  const SlotHook& hook) {
  std::size_t d = dim(config, tower);
  if (hidden.cols() != d) {
    throw DimensionError(fmt::format("{} block expects width {}, got {}", tower_name(tower),
                                     d, hidden.cols()));
  }
  auto p = [&](std::string_view w) { return params.get(block_param(tower, block, w)); };
  auto slot = [&](Slot s, Var x) { return hook ? hook(block, s, x) : x; };

  Var x = layer_norm_rows(hidden);
  Var att = segmented_attention(matmul(x, p("wq")), matmul(x, p("wk")), matmul(x, p("wv")),
                                segments, segments, tower == Tower::text,
                                1.0 / std::sqrt(static_cast<double>(d)));
  Var h1 = add(hidden, slot(Slot::after_attn, matmul(att, p("wo"))));

  Var y = layer_norm_rows(h1);
  Var f = relu(add_row_broadcast(matmul(y, p("w1")), p("b1")));
  f = add_row_broadcast(matmul(f, p("w2")), p("b2"));
  Var h2 = add(h1, slot(Slot::after_ff, f));
  return slot(Slot::after_block, h2);
}

Var run_blocks(ParamBinding& params, const BackboneConfig& config, Tower tower,
               Var hidden, const std::vector<Segment>& segments, std::size_t first,
               std::size_t end, const SlotHook& hook, std::vector<Var>* per_block) {
  if (first > end || end > config.blocks) {
    throw ConfigError(fmt::format("block range [{}, {}) outside 0..{}", first, end,
                                  config.blocks));
  }
  for (std::size_t b = first; b < end; ++b) {
    hidden = encoder_block(params, config, tower, b, hidden, segments, hook);
    if (per_block) per_block->push_back(hidden);
  }
  return hidden;
}

Var embed_text(ParamBinding& params, const PackedPrompts& prompts) {
  Var tok = gather_rows(params.get("text.tok_emb"), prompts.tokens);
  Var pos = gather_rows(params.get("text.pos"), prompts.positions);
  return add(tok, pos);
}

std::vector<Segment> image_segments(const BackboneConfig& config, std::size_t n_images) {
  std::vector<Segment> segs(n_images);
  for (std::size_t i = 0; i < n_images; ++i) segs[i] = {i * config.image_len, config.image_len};
  return segs;
}

std::vector<std::size_t> image_summary_rows(const BackboneConfig& config,
                                            std::size_t n_images) {
  std::vector<std::size_t> rows(n_images);
  for (std::size_t i = 0; i < n_images; ++i) rows[i] = (i + 1) * config.image_len - 1;
  return rows;
}

Var embed_image(ParamBinding& params, const BackboneConfig& config, const Matrix& raw) {
  if (raw.cols() != config.raw_dim || raw.rows() % config.image_len != 0) {
    throw DimensionError(fmt::format("image tokens {} do not tile into {}x{} images",
                                     raw.shape_string(), config.image_len, config.raw_dim));
  }
  std::vector<std::size_t> positions(raw.rows());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % config.image_len;
  Tape& tape = params.tape();
  return add(matmul(tape.constant(raw), params.get("image.proj")),
             gather_rows(params.get("image.pos"), std::move(positions)));
}

std::vector<Var> encode_text(ParamBinding& params, const BackboneConfig& config,
                             const PackedPrompts& prompts, const SlotHook& hook) {
  std::vector<Var> states;
  run_blocks(params, config, Tower::text, embed_text(params, prompts), prompts.segments, 0,
             config.blocks, hook, &states);
  return states;
}

std::vector<Var> encode_image(ParamBinding& params, const BackboneConfig& config,
                              const Matrix& raw, const SlotHook& hook) {
  std::vector<Var> states;
  Var h = embed_image(params, config, raw);
  run_blocks(params, config, Tower::image, h,
             image_segments(config, raw.rows() / config.image_len), 0, config.blocks, hook,
             &states);
  return states;
}

Matrix image_prefix(const ParameterStore& store, const BackboneConfig& config,
                    const Matrix& raw, std::size_t end) {
  Tape tape(false);
  ParamBinding params(tape, store, false);
  Var h = embed_image(params, config, raw);
  h = run_blocks(params, config, Tower::image, h,
                 image_segments(config, raw.rows() / config.image_len), 0, end, {});
  return h.value();
}

Var summarize(Var hidden, std::vector<std::size_t> rows) {
  return layer_norm_rows(gather_rows(hidden, std::move(rows)));
}

}  // namespace dcda

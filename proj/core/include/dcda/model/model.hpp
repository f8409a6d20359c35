#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcda/backbone/encoder.hpp"
#include "dcda/backbone/parameters.hpp"
#include "dcda/backbone/tokens.hpp"
#include "dcda/dataset/dataset.hpp"
#include "dcda/graph/graph.hpp"

namespace dcda {

struct AblationFlags {
  bool drop_l = false;      // no L-Adapters (token embeddings stay trainable)
  bool drop_v = false;      // no V-Adapters
  bool no_cross_l = false;  // GCN sees only each node itself
  bool no_cross_v = false;  // every image is its own auxiliary

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t adapter_depth = 3;  // adapters live in the last `adapter_depth` blocks
  std::vector<Slot> l_slots{Slot::after_attn, Slot::after_ff};
  std::vector<Slot> v_slots{Slot::after_block};
  std::size_t gnn_layers = 2;
  std::size_t v_ff_mult = 2;
  double adapter_init_scale = 0.1;
  double temperature = 0.01;
  bool score_auxiliaries = false;
  AblationFlags ablation;
  std::uint64_t seed = 7;

  void validate() const;
};

struct ScoreWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
};

// s = a cos(v, t_c) + b cos(v_A, t_a) + g cos(v_O, t_o) for 1 x d vectors.
double compatibility_score(const Matrix& v, const Matrix& v_attr, const Matrix& v_obj,
                           const Matrix& t_comp, const Matrix& t_attr, const Matrix& t_obj,
                           const ScoreWeights& w);

// Everything the text side needs for one candidate set: the graph built over
// the candidates and its packed prompts.
struct TextContext {
  std::vector<Composition> candidates;  // caller order; score columns follow it
  CompGraph graph;
  Matrix norm_adj;
  PackedPrompts prompts;
  std::vector<std::size_t> comp_nodes, attr_nodes, obj_nodes;  // per candidate

  std::size_t column(const Composition& c) const;  // throws if absent
};

// L2-normalized per-candidate text features (C x d each).
struct TextFeatures {
  Var comp;
  Var attr;
  Var obj;
};

// L2-normalized image features (n x d' each).
struct ImageFeatures {
  Var full;
  Var attr;
  Var obj;
  Var aux_attr_full;  // set only when auxiliaries are encoded
  Var aux_obj_full;
};

// Cached prefix states (output of the frozen blocks before the first
// adapter block). Auxiliary lists are read only in cross mode.
struct ImageBatch {
  std::vector<const Matrix*> target;
  std::vector<const Matrix*> aux_attr;
  std::vector<const Matrix*> aux_obj;
};

struct TrainBatch {
  ImageBatch images;
  std::vector<std::size_t> labels;  // columns of the training context
  std::vector<std::size_t> aux_attr_labels;
  std::vector<std::size_t> aux_obj_labels;
};

class DcdaModel {
 public:
  DcdaModel(ModelConfig config, Vocabulary vocab);
  // Adopts `params` after checking they match this configuration.
  DcdaModel(ModelConfig config, Vocabulary vocab, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const TokenVocabulary& tokens() const { return tokens_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  std::size_t first_adapter_block() const;
  // Blocks [0, cache_end) carry no adapters and are cached per image.
  std::size_t image_cache_end() const;
  Matrix cache_image(const Matrix& raw_tokens) const;

  TextContext text_context(std::vector<Composition> candidates) const;

  TextFeatures encode_text(ParamBinding& params, const TextContext& ctx) const;
  // `cross` feeds the auxiliaries; otherwise each image is its own auxiliary.
  ImageFeatures encode_images(ParamBinding& params, const ImageBatch& batch,
                              bool cross) const;

  // n x C
  Var scores(ParamBinding& params, const ImageFeatures& img, const TextFeatures& txt) const;

  // `target_scores`, when given, receives the n x C target score block.
  Var training_loss(ParamBinding& params, const TextContext& ctx, const TrainBatch& batch,
                    Matrix* target_scores = nullptr) const;

  // Inference-mode scores of cached images against every candidate.
  Matrix score_matrix(const TextContext& ctx, const std::vector<const Matrix*>& cached,
                      std::size_t chunk = 256) const;

  // Ranked (composition, score), descending; ties by composition order.
  std::vector<std::pair<Composition, double>> predict(const Matrix& raw_tokens,
                                                      const TextContext& ctx) const;

  // Inference-mode L2-normalized attribute / object features.
  std::pair<Matrix, Matrix> disentangled_features(
      const std::vector<const Matrix*>& cached) const;

  // Summary of the full frozen image path (no adapters), L2-normalized.
  Matrix frozen_image_features(const Matrix& raw_tokens) const;

  bool uses_cross_auxiliaries() const;

 private:
  void init_parameters();
  std::vector<std::size_t> v_sites_blocks() const;

  ModelConfig config_;
  Vocabulary vocab_;
  TokenVocabulary tokens_;
  ParameterStore params_;
};

nlohmann::json to_json(const ModelConfig& config);
// Missing keys keep their defaults; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

// Column index of each label in the context; throws on labels outside it.
std::vector<std::size_t> label_columns(const TextContext& ctx,
                                       const std::vector<Composition>& labels);

}  // namespace dcda

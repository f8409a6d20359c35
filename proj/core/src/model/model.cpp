#include "dcda/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "dcda/error.hpp"
#include "dcda/l_adapter/l_adapter.hpp"
#include "dcda/v_adapter/v_adapter.hpp"

namespace dcda {
namespace {

bool has_slot(const std::vector<Slot>& slots, Slot s) {
  return std::find(slots.begin(), slots.end(), s) != slots.end();
}

Matrix stack(const std::vector<const Matrix*>& parts) {
  std::size_t rows = 0;
  for (const Matrix* m : parts) rows += m->rows();
  Matrix out(rows, parts.front()->cols());
  std::size_t r = 0;
  for (const Matrix* m : parts) {
    if (m->cols() != out.cols()) throw DimensionError("cached image widths differ");
    out.eigen().middleRows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(m->rows())) =
        m->eigen();
    r += m->rows();
  }
  return out;
}

Matrix normalized(const Matrix& v) {
  double n = v.eigen().norm();
  if (n == 0.0) throw NumericError("cannot normalize a zero vector");
  return Matrix(RowMajorXd(v.eigen() / n));
}

}  // namespace

void ModelConfig::validate() const {
  backbone.validate();
  if (adapter_depth == 0 || adapter_depth > backbone.blocks) {
    throw ConfigError(fmt::format("adapter_depth {} must be in 1..{}", adapter_depth,
                                  backbone.blocks));
  }
  for (const auto* slots : {&l_slots, &v_slots}) {
    std::vector<Slot> sorted = *slots;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("adapter slot listed twice");
    }
  }
  if (gnn_layers == 0) throw ConfigError("gnn_layers must be at least 1");
  if (v_ff_mult == 0) throw ConfigError("v_ff_mult must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive and finite");
  }
  if (!(adapter_init_scale >= 0.0) || !std::isfinite(adapter_init_scale)) {
    throw ConfigError("adapter_init_scale must be non-negative");
  }
}

double compatibility_score(const Matrix& v, const Matrix& v_attr, const Matrix& v_obj,
                           const Matrix& t_comp, const Matrix& t_attr, const Matrix& t_obj,
                           const ScoreWeights& w) {
  for (const Matrix* m : {&v, &v_attr, &v_obj, &t_comp, &t_attr, &t_obj}) {
    if (m->rows() != 1 || m->cols() != v.cols()) {
      throw DimensionError(fmt::format("score vectors must all be 1x{}, got {}", v.cols(),
                                       m->shape_string()));
    }
  }
  auto cosine = [](const Matrix& a, const Matrix& b) {
    return normalized(a).eigen().cwiseProduct(normalized(b).eigen()).sum();
  };
  return w.alpha * cosine(v, t_comp) + w.beta * cosine(v_attr, t_attr) +
         w.gamma * cosine(v_obj, t_obj);
}

std::size_t TextContext::column(const Composition& c) const {
  auto it = std::find(candidates.begin(), candidates.end(), c);
  if (it == candidates.end()) {
    throw InvariantError(fmt::format("composition ({}, {}) is not a candidate", c.attr, c.obj));
  }
  return static_cast<std::size_t>(it - candidates.begin());
}

std::vector<std::size_t> label_columns(const TextContext& ctx,
                                       const std::vector<Composition>& labels) {
  std::map<Composition, std::size_t> col;
  for (std::size_t i = 0; i < ctx.candidates.size(); ++i) col[ctx.candidates[i]] = i;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (const auto& c : labels) {
    auto it = col.find(c);
    if (it == col.end()) {
      throw InvariantError(fmt::format("label ({}, {}) is outside the candidate set", c.attr,
                                       c.obj));
    }
    out.push_back(it->second);
  }
  return out;
}

DcdaModel::DcdaModel(ModelConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)), tokens_(vocab_) {
  config_.validate();
  vocab_.validate();
  init_parameters();
}

DcdaModel::DcdaModel(ModelConfig config, Vocabulary vocab, ParameterStore params)
    : DcdaModel(std::move(config), std::move(vocab)) {
  const auto& fresh = params_.all();
  const auto& given = params.all();
  if (fresh.size() != given.size()) {
    throw InvariantError(fmt::format("checkpoint has {} tensors, configuration expects {}",
                                     given.size(), fresh.size()));
  }
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    const auto& f = fresh[i];
    const auto& g = given[i];
    if (f.name != g.name || f.frozen != g.frozen || f.value.rows() != g.value.rows() ||
        f.value.cols() != g.value.cols()) {
      throw InvariantError(fmt::format("checkpoint tensor '{}' {} does not match '{}' {}",
                                       g.name, g.value.shape_string(), f.name,
                                       f.value.shape_string()));
    }
  }
  if (params.frozen_hash() != params_.frozen_hash()) {
    throw InvariantError("checkpoint frozen weights differ from the configured backbone seed");
  }
  params_ = std::move(params);
}

void DcdaModel::init_parameters() {
  const auto& bb = config_.backbone;
  init_backbone(params_, bb, tokens_.size());
  if (bb.text_dim != bb.image_dim) {
    std::mt19937_64 head_rng(bb.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(bb.image_dim)));
    Matrix head(bb.image_dim, bb.text_dim);
    for (double& x : head.data()) x = n(head_rng);
    params_.add("head.image", std::move(head), true);
  }
  std::mt19937_64 rng(config_.seed);
  for (std::size_t b = first_adapter_block(); b < bb.blocks; ++b) {
    if (!config_.ablation.drop_l) {
      for (Slot s : config_.l_slots) {
        add_l_adapter_params(params_, b, s, bb.text_dim, config_.gnn_layers,
                             config_.adapter_init_scale, rng);
      }
    }
    if (!config_.ablation.drop_v) {
      for (Slot s : config_.v_slots) {
        add_v_adapter_params(params_, b, s, bb.image_dim, config_.v_ff_mult,
                             config_.adapter_init_scale, rng);
      }
    }
  }
  for (const char* w : {"score.alpha", "score.beta", "score.gamma"}) {
    params_.add(w, Matrix(1, 1, 1.0), false);
  }
}

std::size_t DcdaModel::first_adapter_block() const {
  return config_.backbone.blocks - config_.adapter_depth;
}

std::size_t DcdaModel::image_cache_end() const {
  bool any_v = !config_.ablation.drop_v && !config_.v_slots.empty();
  return any_v ? first_adapter_block() : config_.backbone.blocks;
}

bool DcdaModel::uses_cross_auxiliaries() const {
  return !config_.ablation.drop_v && !config_.ablation.no_cross_v && !config_.v_slots.empty();
}

Matrix DcdaModel::cache_image(const Matrix& raw_tokens) const {
  return image_prefix(params_, config_.backbone, raw_tokens, image_cache_end());
}

TextContext DcdaModel::text_context(std::vector<Composition> candidates) const {
  if (candidates.empty()) throw InvariantError("candidate set is empty");
  TextContext ctx;
  ctx.candidates = candidates;
  ctx.graph = build_compositional_graph(vocab_, std::move(candidates));
  ctx.norm_adj = normalized_adjacency(ctx.graph);
  ctx.prompts = pack_graph_prompts(ctx.graph, tokens_, config_.backbone.text_len);
  for (const auto& c : ctx.candidates) {
    ctx.comp_nodes.push_back(ctx.graph.comp_node(c));
    ctx.attr_nodes.push_back(ctx.graph.attr_node(c.attr));
    ctx.obj_nodes.push_back(ctx.graph.obj_node(c.obj));
  }
  return ctx;
}

TextFeatures DcdaModel::encode_text(ParamBinding& params, const TextContext& ctx) const {
  const auto& bb = config_.backbone;
  Tape& tape = params.tape();
  bool use_l = !config_.ablation.drop_l && !config_.l_slots.empty();
  Var adj;
  if (use_l) {
    adj = tape.constant(config_.ablation.no_cross_l ? Matrix::identity(ctx.graph.n_nodes())
                                                    : ctx.norm_adj);
  }
  std::size_t first = first_adapter_block();
  SlotHook hook = [&](std::size_t b, Slot s, Var x) {
    if (!use_l || b < first || !has_slot(config_.l_slots, s)) return x;
    std::vector<Var> weights;
    for (std::size_t k = 0; k < config_.gnn_layers; ++k) {
      weights.push_back(params.get(l_adapter_param(b, s, k)));
    }
    return l_adapter_forward(x, ctx.prompts.eot_rows, adj, weights);
  };
  Var h = run_blocks(params, bb, Tower::text, embed_text(params, ctx.prompts),
                     ctx.prompts.segments, 0, bb.blocks, hook);
  Var nodes = l2_normalize_rows(summarize(h, ctx.prompts.eot_rows));
  return {gather_rows(nodes, ctx.comp_nodes), gather_rows(nodes, ctx.attr_nodes),
          gather_rows(nodes, ctx.obj_nodes)};
}

ImageFeatures DcdaModel::encode_images(ParamBinding& params, const ImageBatch& batch,
                                       bool cross) const {
  const auto& bb = config_.backbone;
  const std::size_t n = batch.target.size();
  if (n == 0) throw InvariantError("empty image batch");
  bool cross_mode = cross && uses_cross_auxiliaries();
  if (cross_mode && (batch.aux_attr.size() != n || batch.aux_obj.size() != n)) {
    throw DimensionError("auxiliary lists must match the target batch");
  }
  Tape& tape = params.tape();
  const std::size_t rows = n * bb.image_len;
  Var h;
  if (cross_mode) {
    std::vector<const Matrix*> all = batch.target;
    all.insert(all.end(), batch.aux_attr.begin(), batch.aux_attr.end());
    all.insert(all.end(), batch.aux_obj.begin(), batch.aux_obj.end());
    h = tape.constant(stack(all));
  } else {
    h = tape.constant(stack(batch.target));
  }
  if (h.rows() != (cross_mode ? 3 : 1) * rows) {
    throw DimensionError("cached image states have the wrong token count");
  }

  const std::vector<Segment> per_stream = image_segments(bb, n);
  Var s_attr, s_obj;
  std::size_t first = first_adapter_block();
  SlotHook hook = [&](std::size_t b, Slot s, Var x) {
    if (config_.ablation.drop_v || b < first || !has_slot(config_.v_slots, s)) return x;
    VBranchParams pa = bind_v_branch(params, b, s, "attr");
    VBranchParams po = bind_v_branch(params, b, s, "obj");
    if (!cross_mode) {
      auto f = v_adapter_forward(x, x, x, pa, po, per_stream);
      s_attr = add(x, f.h_attr);
      s_obj = add(x, f.h_obj);
      return f.target_out;
    }
    Var t = slice_rows(x, 0, rows);
    Var a = slice_rows(x, rows, rows);
    Var o = slice_rows(x, 2 * rows, rows);
    auto f = v_adapter_forward(t, a, o, pa, po, per_stream);
    s_attr = add(t, f.h_attr);
    s_obj = add(t, f.h_obj);
    return vstack({f.target_out, add(a, f.refined_aux_attr), add(o, f.refined_aux_obj)});
  };
  h = run_blocks(params, bb, Tower::image, h, image_segments(bb, cross_mode ? 3 * n : n),
                 image_cache_end(), bb.blocks, hook);

  const std::vector<std::size_t> summary = image_summary_rows(bb, n);
  bool head = params.store().contains("head.image");
  auto feature = [&](Var stream) {
    Var v = summarize(stream, summary);
    if (head) v = matmul(v, params.get("head.image"));
    return l2_normalize_rows(v);
  };
  ImageFeatures out;
  out.full = feature(cross_mode ? slice_rows(h, 0, rows) : h);
  out.attr = s_attr.valid() ? feature(s_attr) : out.full;
  out.obj = s_obj.valid() ? feature(s_obj) : out.full;
  if (cross_mode) {
    out.aux_attr_full = feature(slice_rows(h, rows, rows));
    out.aux_obj_full = feature(slice_rows(h, 2 * rows, rows));
  }
  return out;
}

Var DcdaModel::scores(ParamBinding& params, const ImageFeatures& img,
                      const TextFeatures& txt) const {
  Var s = mul_scalar(params.get("score.alpha"), matmul_nt(img.full, txt.comp));
  s = add(s, mul_scalar(params.get("score.beta"), matmul_nt(img.attr, txt.attr)));
  return add(s, mul_scalar(params.get("score.gamma"), matmul_nt(img.obj, txt.obj)));
}

Var DcdaModel::training_loss(ParamBinding& params, const TextContext& ctx,
                             const TrainBatch& batch, Matrix* target_scores) const {
  const std::size_t c = ctx.candidates.size();
  auto check = [&](const std::vector<std::size_t>& labels) {
    for (std::size_t l : labels) {
      if (l >= c) throw InvariantError(fmt::format("label column {} outside {} candidates", l, c));
    }
  };
  check(batch.labels);
  if (batch.labels.size() != batch.images.target.size()) {
    throw DimensionError("one label per target image required");
  }
  TextFeatures txt = encode_text(params, ctx);
  ImageFeatures img = encode_images(params, batch.images, true);
  Var s = scores(params, img, txt);
  if (target_scores) *target_scores = s.value();
  std::vector<std::size_t> labels = batch.labels;
  if (config_.score_auxiliaries && img.aux_attr_full.valid()) {
    check(batch.aux_attr_labels);
    check(batch.aux_obj_labels);
    if (batch.aux_attr_labels.size() != labels.size() ||
        batch.aux_obj_labels.size() != labels.size()) {
      throw DimensionError("auxiliary labels must match the batch");
    }
    ImageFeatures a{img.aux_attr_full, img.aux_attr_full, img.aux_attr_full, {}, {}};
    ImageFeatures o{img.aux_obj_full, img.aux_obj_full, img.aux_obj_full, {}, {}};
    s = vstack({s, scores(params, a, txt), scores(params, o, txt)});
    labels.insert(labels.end(), batch.aux_attr_labels.begin(), batch.aux_attr_labels.end());
    labels.insert(labels.end(), batch.aux_obj_labels.begin(), batch.aux_obj_labels.end());
  }
  return softmax_cross_entropy(scale(s, 1.0 / config_.temperature), std::move(labels));
}

Matrix DcdaModel::score_matrix(const TextContext& ctx, const std::vector<const Matrix*>& cached,
                               std::size_t chunk) const {
  Matrix out(cached.size(), ctx.candidates.size());
  if (cached.empty()) return out;
  Tape tape(false);
  ParamBinding params(tape, params_, false);
  TextFeatures txt = encode_text(params, ctx);
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < cached.size(); begin += chunk) {
    std::size_t end = std::min(cached.size(), begin + chunk);
    ImageBatch batch;
    batch.target.assign(cached.begin() + static_cast<std::ptrdiff_t>(begin),
                        cached.begin() + static_cast<std::ptrdiff_t>(end));
    Var s = scores(params, encode_images(params, batch, false), txt);
    out.eigen().middleRows(static_cast<Eigen::Index>(begin),
                           static_cast<Eigen::Index>(end - begin)) = s.value().eigen();
  }
  return out;
}

std::vector<std::pair<Composition, double>> DcdaModel::predict(const Matrix& raw_tokens,
                                                               const TextContext& ctx) const {
  Matrix cached = cache_image(raw_tokens);
  Matrix s = score_matrix(ctx, {&cached});
  std::vector<std::pair<Composition, double>> ranked;
  for (std::size_t i = 0; i < ctx.candidates.size(); ++i) {
    ranked.emplace_back(ctx.candidates[i], s(0, i));
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return ranked;
}

std::pair<Matrix, Matrix> DcdaModel::disentangled_features(
    const std::vector<const Matrix*>& cached) const {
  const std::size_t d = params_.contains("head.image") ? config_.backbone.text_dim
                                                       : config_.backbone.image_dim;
  if (cached.empty()) return {Matrix(0, d), Matrix(0, d)};
  Tape tape(false);
  ParamBinding params(tape, params_, false);
  ImageBatch batch;
  batch.target = cached;
  ImageFeatures f = encode_images(params, batch, false);
  return {f.attr.value(), f.obj.value()};
}

Matrix DcdaModel::frozen_image_features(const Matrix& raw_tokens) const {
  const auto& bb = config_.backbone;
  Tape tape(false);
  ParamBinding params(tape, params_, false);
  Matrix h = image_prefix(params_, bb, raw_tokens, bb.blocks);
  Var v = summarize(tape.constant(h), image_summary_rows(bb, raw_tokens.rows() / bb.image_len));
  if (params_.contains("head.image")) v = matmul(v, params.get("head.image"));
  return l2_normalize_rows(v).value();
}

namespace {

// Reads `key` into `out` when present and records it as known.
template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, std::vector<std::string>& known) {
  known.emplace_back(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("model.{}: {}", key, e.what()));
  }
}

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be a mapping", where));
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError(fmt::format("unknown key '{}.{}'", where, k));
    }
  }
}

std::vector<Slot> slots_from_json(const nlohmann::json& j) {
  std::vector<Slot> out;
  for (const auto& s : j) out.push_back(slot_from_string(s.get<std::string>()));
  return out;
}

nlohmann::json slots_to_json(const std::vector<Slot>& slots) {
  nlohmann::json out = nlohmann::json::array();
  for (Slot s : slots) out.push_back(std::string(to_string(s)));
  return out;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  const BackboneConfig& b = c.backbone;
  return {{"backbone",
           {{"blocks", b.blocks},
            {"text_dim", b.text_dim},
            {"image_dim", b.image_dim},
            {"text_len", b.text_len},
            {"image_len", b.image_len},
            {"raw_dim", b.raw_dim},
            {"ff_mult", b.ff_mult},
            {"seed", b.seed}}},
          {"adapter_depth", c.adapter_depth},
          {"l_slots", slots_to_json(c.l_slots)},
          {"v_slots", slots_to_json(c.v_slots)},
          {"gnn_layers", c.gnn_layers},
          {"v_ff_mult", c.v_ff_mult},
          {"adapter_init_scale", c.adapter_init_scale},
          {"temperature", c.temperature},
          {"score_auxiliaries", c.score_auxiliaries},
          {"ablation",
           {{"drop_l", c.ablation.drop_l},
            {"drop_v", c.ablation.drop_v},
            {"no_cross_l", c.ablation.no_cross_l},
            {"no_cross_v", c.ablation.no_cross_v}}},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  std::vector<std::string> known;
  read_key(j, "adapter_depth", c.adapter_depth, known);
  read_key(j, "gnn_layers", c.gnn_layers, known);
  read_key(j, "v_ff_mult", c.v_ff_mult, known);
  read_key(j, "adapter_init_scale", c.adapter_init_scale, known);
  read_key(j, "temperature", c.temperature, known);
  read_key(j, "score_auxiliaries", c.score_auxiliaries, known);
  read_key(j, "seed", c.seed, known);
  known.insert(known.end(), {"backbone", "l_slots", "v_slots", "ablation"});
  reject_unknown(j, known, "model");
  try {
    if (j.contains("l_slots")) c.l_slots = slots_from_json(j.at("l_slots"));
    if (j.contains("v_slots")) c.v_slots = slots_from_json(j.at("v_slots"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("model slots: {}", e.what()));
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    std::vector<std::string> bk;
    read_key(b, "blocks", c.backbone.blocks, bk);
    read_key(b, "text_dim", c.backbone.text_dim, bk);
    read_key(b, "image_dim", c.backbone.image_dim, bk);
    read_key(b, "text_len", c.backbone.text_len, bk);
    read_key(b, "image_len", c.backbone.image_len, bk);
    read_key(b, "raw_dim", c.backbone.raw_dim, bk);
    read_key(b, "ff_mult", c.backbone.ff_mult, bk);
    read_key(b, "seed", c.backbone.seed, bk);
    reject_unknown(b, bk, "model.backbone");
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    std::vector<std::string> ak;
    read_key(a, "drop_l", c.ablation.drop_l, ak);
    read_key(a, "drop_v", c.ablation.drop_v, ak);
    read_key(a, "no_cross_l", c.ablation.no_cross_l, ak);
    read_key(a, "no_cross_v", c.ablation.no_cross_v, ak);
    reject_unknown(a, ak, "model.ablation");
  }
  c.validate();
  return c;
}

}  // namespace dcda

#include "dcda/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "dcda/error.hpp"
#include "dcda/evaluator/evaluator.hpp"
#include "dcda/numerics/grad_check.hpp"

namespace dcda {

namespace fs = std::filesystem;
using nlohmann::json;

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adam.eps must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("adam.weight_decay must be non-negative");
  }
}

std::string OptimizerState::serialize() const {
  Checkpoint c;
  for (const auto& [name, mat] : m) c.params.add("m/" + name, mat, false);
  for (const auto& [name, mat] : v) c.params.add("v/" + name, mat, false);
  c.sections["step"] = std::to_string(step);
  c.sections["hyper"] = json{{"lr", hyper.lr},
                             {"beta1", hyper.beta1},
                             {"beta2", hyper.beta2},
                             {"eps", hyper.eps},
                             {"weight_decay", hyper.weight_decay}}
                            .dump();
  return encode_checkpoint(c);
}

OptimizerState OptimizerState::deserialize(const std::string& bytes) {
  Checkpoint c = decode_checkpoint(bytes);
  OptimizerState s;
  try {
    s.step = std::stoull(c.sections.at("step"));
    json h = json::parse(c.sections.at("hyper"));
    s.hyper.lr = h.at("lr");
    s.hyper.beta1 = h.at("beta1");
    s.hyper.beta2 = h.at("beta2");
    s.hyper.eps = h.at("eps");
    s.hyper.weight_decay = h.at("weight_decay");
  } catch (const std::exception& e) {
    throw ParseError(fmt::format("optimizer state: {}", e.what()), 0);
  }
  for (const auto& p : c.params.all()) {
    if (p.name.rfind("m/", 0) == 0) {
      s.m[p.name.substr(2)] = p.value;
    } else if (p.name.rfind("v/", 0) == 0) {
      s.v[p.name.substr(2)] = p.value;
    } else {
      throw ParseError(fmt::format("optimizer state: unexpected tensor '{}'", p.name), 0);
    }
  }
  return s;
}

void adam_step(ParameterStore& params, const std::map<std::string, Matrix>& grads,
               OptimizerState& state) {
  const AdamConfig& h = state.hyper;
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) {
      throw InvariantError(fmt::format("gradient for unknown parameter '{}'", name));
    }
    const Parameter& p = params.at(name);
    if (p.frozen) throw InvariantError(fmt::format("gradient for frozen parameter '{}'", name));
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
      throw DimensionError(fmt::format("gradient of '{}' is {}, parameter is {}", name,
                                       g.shape_string(), p.value.shape_string()));
    }
    if (!g.eigen().allFinite()) {
      throw NumericError(fmt::format("non-finite gradient for parameter '{}'", name));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (const auto& [name, g] : grads) {
    Parameter& p = params.at(name);
    auto [mi, fresh_m] = state.m.try_emplace(name, Matrix(g.rows(), g.cols()));
    auto [vi, fresh_v] = state.v.try_emplace(name, Matrix(g.rows(), g.cols()));
    auto m = mi->second.eigen().array();
    auto v = vi->second.eigen().array();
    const auto ga = g.eigen().array();
    m = h.beta1 * m + (1.0 - h.beta1) * ga;
    v = h.beta2 * v + (1.0 - h.beta2) * ga.square();
    auto w = p.value.eigen().array();
    w -= h.lr * h.weight_decay * w + h.lr * (m / c1) / ((v / c2).sqrt() + h.eps);
  }
}

double clip_global_norm(std::map<std::string, Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.eigen().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && max_norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& [name, g] : grads) g.eigen() *= f;
  }
  return norm;
}

namespace {

// Batch images drawn for gradient verification, with auxiliaries sharing the
// attribute or object (the target itself when none exists).
struct VerifyBatch {
  std::vector<Matrix> cached;
  TrainBatch batch;
};

VerifyBatch verify_batch(const DcdaModel& model, const Dataset& data, const TextContext& ctx,
                         std::size_t n, std::mt19937_64& rng) {
  auto index = data.train_index();
  auto pick = [&](const std::vector<std::size_t>& ids) {
    return ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)];
  };
  std::vector<std::size_t> targets, aux_a, aux_o;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t id = std::uniform_int_distribution<std::size_t>(0, data.train.size() - 1)(rng);
    const Composition c = data.train[id].label;
    std::vector<std::size_t> share_a, share_o;
    for (const auto& [comp, ids] : index) {
      if (comp == c) continue;
      if (comp.attr == c.attr) share_a.insert(share_a.end(), ids.begin(), ids.end());
      if (comp.obj == c.obj) share_o.insert(share_o.end(), ids.begin(), ids.end());
    }
    targets.push_back(id);
    aux_a.push_back(share_a.empty() ? id : pick(share_a));
    aux_o.push_back(share_o.empty() ? id : pick(share_o));
  }
  VerifyBatch vb;
  vb.cached.reserve(3 * n);
  for (const auto* list : {&targets, &aux_a, &aux_o}) {
    for (std::size_t id : *list) vb.cached.push_back(model.cache_image(data.train[id].tokens));
  }
  for (std::size_t i = 0; i < n; ++i) {
    vb.batch.images.target.push_back(&vb.cached[i]);
    vb.batch.images.aux_attr.push_back(&vb.cached[n + i]);
    vb.batch.images.aux_obj.push_back(&vb.cached[2 * n + i]);
    vb.batch.labels.push_back(ctx.column(data.train[targets[i]].label));
    vb.batch.aux_attr_labels.push_back(ctx.column(data.train[aux_a[i]].label));
    vb.batch.aux_obj_labels.push_back(ctx.column(data.train[aux_o[i]].label));
  }
  return vb;
}

}  // namespace

GradVerifyReport grad_verify(const DcdaModel& model, const Dataset& data,
                             const GradVerifyOptions& options) {
  if (options.points == 0 || options.batch_size == 0) {
    throw ConfigError("grad_verify needs at least one point and one image");
  }
  if (data.train.empty()) throw ConfigError("grad_verify needs training images");
  const TextContext ctx = model.text_context(data.seen);
  const std::vector<std::string> names = model.params().trainable_names();
  GradVerifyReport report;
  report.tolerance = options.tolerance;
  for (const auto& n : names) report.groups.push_back({n, 0.0, 0});

  std::mt19937_64 rng(options.seed);
  for (std::size_t pt = 0; pt < options.points; ++pt) {
    VerifyBatch vb = verify_batch(model, data, ctx, options.batch_size, rng);
    // Later points move off the initialization so zero-initialized tensors
    // are checked away from their starting values.
    std::normal_distribution<double> jitter(0.0, 0.02);
    std::vector<Matrix> point;
    for (const auto& n : names) {
      Matrix w = model.params().at(n).value;
      if (pt > 0) {
        for (double& x : w.data()) x += jitter(rng);
      }
      point.push_back(std::move(w));
    }
    DifferentiableFn fn = [&](Tape& tape, std::span<const Var> in) {
      ParamBinding p(tape, model.params());
      for (std::size_t i = 0; i < names.size(); ++i) p.override_with(names[i], in[i]);
      return model.training_loss(p, ctx, vb.batch);
    };
    GradCheckOptions gc;
    gc.eps = options.eps;
    gc.seed = options.seed + pt;
    gc.max_coords_per_input = options.max_coords;
    GradCheckReport r = grad_check_report(fn, point, gc);
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto& g = report.groups[i];
      g.max_rel_error = std::max(g.max_rel_error, r.per_input[i]);
      g.coords += options.max_coords == 0
                      ? point[i].size()
                      : std::min(options.max_coords, point[i].size());
    }
  }
  for (const auto& g : report.groups) {
    report.max_rel_error = std::max(report.max_rel_error, g.max_rel_error);
  }
  return report;
}

json to_json(const GradVerifyReport& r) {
  json groups = json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"name", g.name}, {"max_rel_error", g.max_rel_error}, {"coords", g.coords}});
  }
  return {{"max_rel_error", r.max_rel_error},
          {"tolerance", r.tolerance},
          {"passed", r.passed()},
          {"groups", groups}};
}

void TrainerConfig::validate() const {
  if (batch_size == 0) throw ConfigError("trainer.batch_size must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("trainer.clip_norm must be positive");
  if (!(divergence_threshold > 0.0)) {
    throw ConfigError("trainer.divergence_threshold must be positive");
  }
  if (eval_every == 0) throw ConfigError("trainer.eval_every must be positive");
  if (workers == 0) throw ConfigError("trainer.workers must be positive");
  if (strategy.n == 0) throw ConfigError("sampler.n must be positive");
  adam.validate();
}

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out, std::vector<std::string>& known,
              const std::string& where) {
  known.emplace_back(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}.{}: {}", where, key, e.what()));
  }
}

void reject_unknown(const json& j, const std::vector<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be a mapping", where));
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError(fmt::format("unknown key '{}.{}'", where, k));
    }
  }
}

}  // namespace

json to_json(const TrainerConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"clip_norm", c.clip_norm},
          {"shuffle_seed", c.shuffle_seed},
          {"divergence_threshold", c.divergence_threshold},
          {"eval_every", c.eval_every},
          {"checkpoint_every", c.checkpoint_every},
          {"verify_gradients", c.verify_gradients},
          {"grad_verify",
           {{"points", c.grad_verify.points},
            {"batch_size", c.grad_verify.batch_size},
            {"max_coords", c.grad_verify.max_coords},
            {"eps", c.grad_verify.eps},
            {"tolerance", c.grad_verify.tolerance},
            {"seed", c.grad_verify.seed}}},
          {"workers", c.workers},
          {"strategy",
           {{"kind", to_string(c.strategy.kind)},
            {"n", c.strategy.n},
            {"seed", c.strategy.seed},
            {"count_weight_representatives_only", c.strategy.count_weight_representatives_only}}},
          {"adam",
           {{"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"eps", c.adam.eps},
            {"weight_decay", c.adam.weight_decay}}}};
}

TrainerConfig trainer_config_from_json(const json& j) {
  TrainerConfig c;
  std::vector<std::string> known;
  const std::string w = "trainer";
  read_key(j, "epochs", c.epochs, known, w);
  read_key(j, "batch_size", c.batch_size, known, w);
  read_key(j, "clip_norm", c.clip_norm, known, w);
  read_key(j, "shuffle_seed", c.shuffle_seed, known, w);
  read_key(j, "divergence_threshold", c.divergence_threshold, known, w);
  read_key(j, "eval_every", c.eval_every, known, w);
  read_key(j, "checkpoint_every", c.checkpoint_every, known, w);
  read_key(j, "verify_gradients", c.verify_gradients, known, w);
  read_key(j, "workers", c.workers, known, w);
  known.insert(known.end(), {"grad_verify", "strategy", "adam"});
  reject_unknown(j, known, w);
  if (j.contains("grad_verify")) {
    const json& g = j.at("grad_verify");
    std::vector<std::string> k;
    const std::string wg = "trainer.grad_verify";
    read_key(g, "points", c.grad_verify.points, k, wg);
    read_key(g, "batch_size", c.grad_verify.batch_size, k, wg);
    read_key(g, "max_coords", c.grad_verify.max_coords, k, wg);
    read_key(g, "eps", c.grad_verify.eps, k, wg);
    read_key(g, "tolerance", c.grad_verify.tolerance, k, wg);
    read_key(g, "seed", c.grad_verify.seed, k, wg);
    reject_unknown(g, k, wg);
  }
  if (j.contains("strategy")) {
    const json& s = j.at("strategy");
    std::vector<std::string> k;
    const std::string ws = "trainer.strategy";
    std::string kind = to_string(c.strategy.kind);
    read_key(s, "kind", kind, k, ws);
    c.strategy.kind = strategy_from_string(kind);
    read_key(s, "n", c.strategy.n, k, ws);
    read_key(s, "seed", c.strategy.seed, k, ws);
    read_key(s, "count_weight_representatives_only",
             c.strategy.count_weight_representatives_only, k, ws);
    reject_unknown(s, k, ws);
  }
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    std::vector<std::string> k;
    const std::string wa = "trainer.adam";
    read_key(a, "lr", c.adam.lr, k, wa);
    read_key(a, "beta1", c.adam.beta1, k, wa);
    read_key(a, "beta2", c.adam.beta2, k, wa);
    read_key(a, "eps", c.adam.eps, k, wa);
    read_key(a, "weight_decay", c.adam.weight_decay, k, wa);
    reject_unknown(a, k, wa);
  }
  c.validate();
  return c;
}

Checkpoint model_checkpoint(const DcdaModel& model) {
  Checkpoint c;
  c.params = model.params();
  c.sections["model_config"] = to_json(model.config()).dump();
  c.sections["vocabulary"] =
      json{{"attributes", model.vocab().attributes}, {"objects", model.vocab().objects}}.dump();
  return c;
}

DcdaModel model_from_checkpoint(const Checkpoint& ckpt) {
  auto need = [&](const char* key) -> const std::string& {
    auto it = ckpt.sections.find(key);
    if (it == ckpt.sections.end()) {
      throw InvariantError(fmt::format("checkpoint has no '{}' section", key));
    }
    return it->second;
  };
  json cfg, voc;
  try {
    cfg = json::parse(need("model_config"));
    voc = json::parse(need("vocabulary"));
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("checkpoint metadata: {}", e.what()), e.byte);
  }
  Vocabulary vocab;
  vocab.attributes = voc.at("attributes").get<std::vector<std::string>>();
  vocab.objects = voc.at("objects").get<std::vector<std::string>>();
  return DcdaModel(model_config_from_json(cfg), std::move(vocab), ckpt.params);
}

DcdaModel load_model(const fs::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

namespace {

// Everything a resumed run needs besides the live parameters.
struct ResumeState {
  std::size_t epoch = 0;
  std::uint64_t steps = 0;
  std::size_t best_epoch = 0;
  double best_val_auc = -1.0;
  std::uint64_t frozen_hash = 0;
};

json schedule_fingerprint(const TrainerConfig& c) {
  json j = to_json(c);
  // Extending or shortening the run and changing output cadence or worker
  // count do not change the trajectory.
  for (const char* k : {"epochs", "checkpoint_every", "workers", "verify_gradients", "grad_verify"}) {
    j.erase(k);
  }
  return j;
}

Checkpoint training_checkpoint(const DcdaModel& model, const TrainerConfig& config,
                               const OptimizerState& opt, const AuxiliarySampler& sampler,
                               const ParameterStore& best, const ResumeState& rs) {
  Checkpoint c = model_checkpoint(model);
  c.sections["optimizer"] = opt.serialize();
  c.sections["sampler"] = sampler.serialize_state();
  c.sections["trainer"] = json{{"epoch", rs.epoch},
                               {"steps", rs.steps},
                               {"best_epoch", rs.best_epoch},
                               {"best_val_auc", rs.best_val_auc},
                               {"frozen_hash", rs.frozen_hash},
                               {"schedule", schedule_fingerprint(config)}}
                              .dump();
  Checkpoint b;
  for (const auto& p : best.all()) {
    if (!p.frozen) b.params.add(p.name, p.value, false);
  }
  c.sections["best_params"] = encode_checkpoint(b);
  return c;
}

void restore_best(ParameterStore& target, const std::string& bytes) {
  Checkpoint b = decode_checkpoint(bytes);
  for (const auto& p : b.params.all()) {
    if (!target.contains(p.name) || target.at(p.name).frozen) {
      throw InvariantError(fmt::format("best parameters name unknown tensor '{}'", p.name));
    }
    target.at(p.name).value = p.value;
  }
}

std::string dump_finite(double v) { return std::isfinite(v) ? json(v).dump() : "null"; }

}  // namespace

TrainRun train(DcdaModel& model, const Dataset& data, const TrainerConfig& config,
               const TrainOptions& options) {
  config.validate();
  if (!(model.vocab() == data.vocab)) {
    throw ConfigError("model vocabulary differs from the dataset vocabulary");
  }
  if (data.train.empty()) throw ConfigError("training split is empty");

  TrainRun run;
  run.config = config;
  OptimizerState opt{config.adam, 0, {}, {}};
  AuxiliarySampler sampler(config.strategy, data);
  ParameterStore best = model.params();
  ResumeState rs;
  rs.frozen_hash = model.params().frozen_hash();

  const bool write = !options.out_dir.empty();
  if (write) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) {
      throw IoError(fmt::format("cannot create {}: {}", options.out_dir.string(), ec.message()));
    }
  }

  if (options.resume_from) {
    Checkpoint ck = load_checkpoint(*options.resume_from);
    for (const char* k : {"optimizer", "sampler", "trainer", "best_params"}) {
      if (!ck.sections.count(k)) {
        throw InvariantError(fmt::format("{} is not a training checkpoint (no '{}' section)",
                                         options.resume_from->string(), k));
      }
    }
    DcdaModel restored = model_from_checkpoint(ck);
    if (to_json(restored.config()) != to_json(model.config()) ||
        !(restored.vocab() == model.vocab())) {
      throw ConfigError("checkpoint model configuration differs from the requested one");
    }
    json t = json::parse(ck.sections.at("trainer"));
    if (t.at("schedule") != schedule_fingerprint(config)) {
      throw ConfigError("checkpoint trainer schedule differs from the requested one");
    }
    model = std::move(restored);
    opt = OptimizerState::deserialize(ck.sections.at("optimizer"));
    sampler.restore_state(ck.sections.at("sampler"));
    rs.epoch = t.at("epoch");
    rs.steps = t.at("steps");
    rs.best_epoch = t.at("best_epoch");
    rs.best_val_auc = t.at("best_val_auc");
    rs.frozen_hash = t.at("frozen_hash");
    if (rs.frozen_hash != model.params().frozen_hash()) {
      throw InvariantError("frozen parameters changed since the run started");
    }
    best = model.params();
    restore_best(best, ck.sections.at("best_params"));
  } else {
    if (config.verify_gradients) {
      run.grad_report = grad_verify(model, data, config.grad_verify);
      if (!run.grad_report->passed()) {
        std::string worst;
        for (const auto& g : run.grad_report->groups) {
          if (g.max_rel_error > config.grad_verify.tolerance) {
            worst += fmt::format(" {}={:.3g}", g.name, g.max_rel_error);
          }
        }
        throw NumericError(fmt::format("gradient verification failed (tolerance {:g}):{}",
                                       config.grad_verify.tolerance, worst));
      }
    }
    if (write) {
      run.initial_checkpoint = options.out_dir / "initial.ckpt";
      save_checkpoint(run.initial_checkpoint,
                      training_checkpoint(model, config, opt, sampler, best, rs));
    }
  }

  std::ofstream log;
  if (write) {
    log.open(options.out_dir / "train_log.ndjson",
             options.resume_from ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open train_log.ndjson");
  }

  const TextContext ctx = model.text_context(data.seen);
  std::vector<Matrix> cached;
  std::vector<std::size_t> columns;
  if (rs.epoch < config.epochs) {
    cached.reserve(data.train.size());
    for (const auto& im : data.train) {
      cached.push_back(model.cache_image(im.tokens));
      columns.push_back(ctx.column(im.label));
    }
  }
  const bool cross = model.uses_cross_auxiliaries();

  for (std::size_t epoch = rs.epoch + 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{config.shuffle_seed, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 shuffle_rng(seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog el;
    el.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      TrainBatch tb;
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t id = order[i];
        tb.images.target.push_back(&cached[id]);
        tb.labels.push_back(columns[id]);
        if (!cross) continue;
        const Composition c = data.train[id].label;
        for (Axis axis : {Axis::attr_sharing, Axis::obj_sharing}) {
          AuxiliaryDraw d = sampler.sample(c, axis);
          const std::size_t aux = d.fallback ? id : d.image_id;
          (axis == Axis::attr_sharing ? tb.images.aux_attr : tb.images.aux_obj)
              .push_back(&cached[aux]);
          (axis == Axis::attr_sharing ? tb.aux_attr_labels : tb.aux_obj_labels)
              .push_back(columns[aux]);
        }
      }
      sampler.next_batch();

      Tape tape;
      ParamBinding params(tape, model.params());
      Matrix scores;
      Var loss = model.training_loss(params, ctx, tb, &scores);
      const double l = loss.value()(0, 0);
      if (!std::isfinite(l) || l > config.divergence_threshold) {
        throw DivergenceError(fmt::format(
            "loss {} exceeds {:g} at epoch {} step {} (batch of {}, lr {:g})", l,
            config.divergence_threshold, epoch, rs.steps + 1, tb.labels.size(), config.adam.lr));
      }
      tape.backward(loss);
      auto grads = params.trainable_gradients();
      const double gnorm = clip_global_norm(grads, config.clip_norm);
      adam_step(model.params(), grads, opt);
      ++rs.steps;

      std::size_t batch_correct = 0;
      for (std::size_t r = 0; r < tb.labels.size(); ++r) {
        Eigen::Index arg = 0;
        scores.eigen().row(static_cast<Eigen::Index>(r)).maxCoeff(&arg);
        batch_correct += static_cast<std::size_t>(arg) == tb.labels[r];
      }
      correct += batch_correct;
      loss_sum += l;
      ++batches;
      if (write) {
        log << fmt::format(
            R"({{"event":"step","epoch":{},"step":{},"loss":{},"seen_acc":{},"lr":{},"grad_norm":{}}})",
            epoch, rs.steps, json(l).dump(),
            json(double(batch_correct) / tb.labels.size()).dump(), json(config.adam.lr).dump(),
            json(gnorm).dump())
            << '\n';
      }
    }
    el.steps = rs.steps;
    el.mean_loss = loss_sum / batches;
    el.train_acc = double(correct) / order.size();

    if (model.params().frozen_hash() != rs.frozen_hash) {
      throw InvariantError(fmt::format("frozen parameters changed during epoch {}", epoch));
    }

    rs.epoch = epoch;
    const bool eval_now = epoch % config.eval_every == 0 || epoch == config.epochs;
    if (eval_now && !data.val.empty()) {
      EvalOptions eo;
      eo.workers = config.workers;
      EvalReport rep = evaluate(model, data, Split::val, eo);
      el.val_seen = rep.curve.seen;
      el.val_unseen = rep.curve.unseen;
      el.val_harmonic = rep.curve.harmonic;
      el.val_auc = rep.curve.auc;
      if (rep.curve.auc > rs.best_val_auc) {
        rs.best_val_auc = rep.curve.auc;
        rs.best_epoch = epoch;
        best = model.params();
        if (write) {
          Checkpoint bc = model_checkpoint(model);
          bc.sections["selection"] =
              json{{"epoch", epoch}, {"val_auc", rep.curve.auc}}.dump();
          save_checkpoint(options.out_dir / "best.ckpt", bc);
        }
      }
    }
    run.epochs.push_back(el);

    if (write) {
      log << fmt::format(
                 R"({{"event":"epoch","epoch":{},"steps":{},"loss":{},"seen_acc":{},"lr":{},"val_S":{},"val_U":{},"val_H":{},"val_AUC":{}}})",
                 epoch, rs.steps, json(el.mean_loss).dump(), json(el.train_acc).dump(),
                 json(config.adam.lr).dump(), dump_finite(el.val_seen),
                 dump_finite(el.val_unseen), dump_finite(el.val_harmonic),
                 dump_finite(el.val_auc))
          << '\n';
      log.flush();
      Checkpoint ck = training_checkpoint(model, config, opt, sampler, best, rs);
      save_checkpoint(options.out_dir / "last.ckpt", ck);
      if (config.checkpoint_every && epoch % config.checkpoint_every == 0) {
        save_checkpoint(options.out_dir / fmt::format("epoch_{:04d}.ckpt", epoch), ck);
      }
    }
    if (options.progress) {
      *options.progress << fmt::format("epoch {:>4}  loss {:.4f}  train_acc {:.3f}", epoch,
                                       el.mean_loss, el.train_acc);
      if (std::isfinite(el.val_auc)) {
        *options.progress << fmt::format("  val S {:.3f} U {:.3f} H {:.3f} AUC {:.3f}",
                                         el.val_seen, el.val_unseen, el.val_harmonic,
                                         el.val_auc);
      }
      *options.progress << std::endl;
    }
  }

  if (rs.best_epoch > 0) model.params() = best;
  run.steps = rs.steps;
  run.best_epoch = rs.best_epoch;
  run.best_val_auc = rs.best_val_auc;
  run.frozen_hash = rs.frozen_hash;
  if (write) {
    if (fs::exists(options.out_dir / "last.ckpt")) run.last_checkpoint = options.out_dir / "last.ckpt";
    if (fs::exists(options.out_dir / "best.ckpt")) run.best_checkpoint = options.out_dir / "best.ckpt";
    if (fs::exists(options.out_dir / "initial.ckpt")) {
      run.initial_checkpoint = options.out_dir / "initial.ckpt";
    }
  }
  return run;
}

}  // namespace dcda

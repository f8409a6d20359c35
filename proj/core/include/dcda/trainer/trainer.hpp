#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcda/backbone/checkpoint.hpp"
#include "dcda/dataset/dataset.hpp"
#include "dcda/model/model.hpp"
#include "dcda/sampler/sampler.hpp"

namespace dcda {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-5;  // decoupled

  void validate() const;
};

struct OptimizerState {
  AdamConfig hyper;
  std::uint64_t step = 0;
  std::map<std::string, Matrix> m;  // first moments, by parameter name
  std::map<std::string, Matrix> v;  // second moments

  // Exact binary round trip (doubles stored bit-for-bit).
  std::string serialize() const;
  static OptimizerState deserialize(const std::string& bytes);

  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    return a.step == b.step && a.m == b.m && a.v == b.v && a.hyper.lr == b.hyper.lr &&
           a.hyper.beta1 == b.hyper.beta1 && a.hyper.beta2 == b.hyper.beta2 &&
           a.hyper.eps == b.hyper.eps && a.hyper.weight_decay == b.hyper.weight_decay;
  }
};

// One decoupled-weight-decay Adam update of every trainable parameter that
// has a gradient:
//   m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
//   w -= lr * wd * w + lr * m_hat / (sqrt(v_hat) + eps)
// Throws NumericError naming the parameter on a non-finite gradient,
// InvariantError for gradients of frozen or unknown parameters and
// DimensionError on shape mismatch.
void adam_step(ParameterStore& params, const std::map<std::string, Matrix>& grads,
               OptimizerState& state);

// Scales all gradients so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_global_norm(std::map<std::string, Matrix>& grads, double max_norm);

struct GradVerifyOptions {
  std::size_t points = 3;       // independent seeded batches
  std::size_t batch_size = 4;
  std::size_t max_coords = 4;   // per tensor per point; 0 checks all
  double eps = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 99;
};

struct GradGroupResult {
  std::string name;  // parameter tensor
  double max_rel_error = 0.0;
  std::size_t coords = 0;
};

struct GradVerifyReport {
  std::vector<GradGroupResult> groups;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return max_rel_error <= tolerance; }
};

// Finite-difference check of the training loss against every trainable
// tensor of `model`, with auxiliaries drawn from `data`.
GradVerifyReport grad_verify(const DcdaModel& model, const Dataset& data,
                             const GradVerifyOptions& options = {});

nlohmann::json to_json(const GradVerifyReport& report);

struct TrainerConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double clip_norm = 5.0;
  std::uint64_t shuffle_seed = 11;
  double divergence_threshold = 1e3;
  std::size_t eval_every = 1;        // epochs between validation passes
  std::size_t checkpoint_every = 0;  // keep epoch_NNNN.ckpt snapshots; 0 = none
  bool verify_gradients = false;
  GradVerifyOptions grad_verify;
  std::size_t workers = 1;
  StrategyConfig strategy;
  AdamConfig adam;

  void validate() const;
};

nlohmann::json to_json(const TrainerConfig& config);
// Missing keys keep their defaults; unknown keys raise ConfigError.
TrainerConfig trainer_config_from_json(const nlohmann::json& j);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::uint64_t steps = 0;
  double mean_loss = 0.0;
  double train_acc = 0.0;
  // Validation metrics; NaN on epochs without a validation pass.
  double val_seen = std::numeric_limits<double>::quiet_NaN();
  double val_unseen = std::numeric_limits<double>::quiet_NaN();
  double val_harmonic = std::numeric_limits<double>::quiet_NaN();
  double val_auc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainRun {
  TrainerConfig config;
  std::vector<EpochLog> epochs;  // epochs run by this call
  std::uint64_t steps = 0;       // global step count
  std::size_t best_epoch = 0;    // 0 = initial parameters
  double best_val_auc = -1.0;
  std::uint64_t frozen_hash = 0;
  std::optional<GradVerifyReport> grad_report;
  std::filesystem::path initial_checkpoint, last_checkpoint, best_checkpoint;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::optional<std::filesystem::path> resume_from;
  std::ostream* progress = nullptr;  // human-readable epoch lines
};

// Trains `model` in place. On return the model holds the best-validation
// parameters. Files written under `out_dir`: initial.ckpt, last.ckpt,
// best.ckpt, optional epoch_NNNN.ckpt snapshots and train_log.ndjson.
// Throws DivergenceError when the loss exceeds the threshold or is NaN.
TrainRun train(DcdaModel& model, const Dataset& data, const TrainerConfig& config,
               const TrainOptions& options = {});

// Checkpoint carrying the model configuration and vocabulary, enough to
// rebuild the model with `load_model`.
Checkpoint model_checkpoint(const DcdaModel& model);
DcdaModel model_from_checkpoint(const Checkpoint& ckpt);
DcdaModel load_model(const std::filesystem::path& path);

}  // namespace dcda

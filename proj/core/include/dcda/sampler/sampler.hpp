#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcda/dataset/dataset.hpp"
#include "dcda/graph/graph.hpp"

namespace dcda {

// attr_sharing: candidates (a, o') for target (a, o); obj_sharing: (a', o).
enum class Axis { attr_sharing, obj_sharing };

struct ScoredComposition {
  Composition comp;
  double score = 0.0;

  friend bool operator==(const ScoredComposition&, const ScoredComposition&) = default;
};

struct RepresentativeSet {
  Composition target;
  Axis axis = Axis::attr_sharing;
  std::vector<ScoredComposition> most;   // descending score
  std::vector<ScoredComposition> least;  // ascending score

  bool empty() const { return most.empty(); }
};

// All seen compositions sharing the target's fixed primitive, other than the
// target itself, scored by relevance of the varying primitive (zero scores
// included). Sorted by ascending varying-primitive index.
std::vector<ScoredComposition> sharing_candidates(const Composition& target, Axis axis,
                                                  const RelevanceMatrices& rel,
                                                  const std::vector<Composition>& seen);

// Top-n most and least relevant non-zero-score candidates. Ties break by
// ascending primitive index. The two lists may overlap when candidates are few.
RepresentativeSet representative_compositions(const Composition& target, Axis axis,
                                              std::size_t n, const RelevanceMatrices& rel,
                                              const std::vector<Composition>& seen);

enum class SamplingGroup { most, least };

// most: p_i = s_i / sum(s). least: p_i proportional to 1 / s_i, so the least
// relevant candidate is the likeliest. Scores must be positive.
std::vector<double> sampling_weights(SamplingGroup group, std::span<const double> scores);

enum class StrategyKind { rd, prg, prg_n };

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::prg;
  std::size_t n = 5;
  std::uint64_t seed = 0;
  // PRG+N count-weighted phase: false samples the full candidate set, true
  // restricts it to the union of the representative groups.
  bool count_weight_representatives_only = false;
};

// What a batch index selects from.
enum class SamplingPhase { uniform, most, least, count_weighted };

std::string to_string(SamplingPhase p);

struct AuxiliaryDraw {
  bool fallback = false;  // no candidate: caller uses the target image itself
  Composition comp;
  std::size_t image_id = 0;  // index into Dataset::train
  SamplingPhase phase = SamplingPhase::uniform;
};

// Auxiliary-composition sampler. Holds a generator and a batch counter, so
// one instance per training worker. Deterministic given the seed and the
// sequence of (batch index, target) requests.
class AuxiliarySampler {
 public:
  AuxiliarySampler(StrategyConfig config, const Dataset& dataset);

  const StrategyConfig& config() const { return config_; }
  const RelevanceMatrices& relevance() const { return rel_; }

  std::uint64_t batch_index() const { return batch_index_; }
  void set_batch_index(std::uint64_t b) { batch_index_ = b; }
  void next_batch() { ++batch_index_; }

  SamplingPhase phase() const;

  AuxiliaryDraw sample(const Composition& target, Axis axis);

  // Candidate compositions and probabilities the current phase draws from.
  std::vector<std::pair<Composition, double>> distribution(const Composition& target,
                                                           Axis axis) const;

  std::string serialize_state() const;
  void restore_state(const std::string& state);

 private:
  const std::vector<std::size_t>& images_of(const Composition& c) const;

  StrategyConfig config_;
  std::vector<Composition> seen_;
  RelevanceMatrices rel_;
  std::map<Composition, std::vector<std::size_t>> train_index_;
  std::mt19937_64 rng_;
  std::uint64_t batch_index_ = 0;
};

}  // namespace dcda

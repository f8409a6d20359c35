#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dcda/numerics/matrix.hpp"

namespace dcda {

struct Vocabulary {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;

  std::size_t n_attrs() const { return attributes.size(); }
  std::size_t n_objs() const { return objects.size(); }

  // Names unique per list, at least two of each.
  void validate() const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

struct Composition {
  std::size_t attr = 0;
  std::size_t obj = 0;

  friend auto operator<=>(const Composition&, const Composition&) = default;
};

std::string to_string(const Composition& c, const Vocabulary& vocab);

struct LabeledImage {
  Matrix tokens;  // image_tokens x raw_dim
  Composition label;

  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

enum class ImbalanceKind { none, zipf };

struct ImbalanceProfile {
  ImbalanceKind kind = ImbalanceKind::none;
  double exponent = 1.0;       // count ~ images_per_comp * rank^-exponent
  std::size_t min_images = 3;

  friend bool operator==(const ImbalanceProfile&, const ImbalanceProfile&) = default;
};

struct SynthConfig {
  std::size_t n_attrs = 8;
  std::size_t n_objs = 10;
  std::size_t n_seen = 60;
  std::size_t n_unseen = 20;
  std::size_t images_per_comp = 50;
  std::size_t val_images_per_comp = 10;
  std::size_t test_images_per_comp = 10;
  std::size_t image_tokens = 8;
  std::size_t raw_dim = 16;
  std::size_t latent_dim = 16;
  double noise_std = 0.3;
  double latent_jitter = 0.25;
  double entanglement_strength = 1.0;
  ImbalanceProfile imbalance;

  // Tokens [0, attr_token_count) are attribute-dominant, the rest object-dominant.
  std::size_t attr_token_count() const { return image_tokens / 2; }

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

// A generalized-CZSL dataset. Seen and unseen composition lists are sorted.
struct Dataset {
  Vocabulary vocab;
  std::vector<Composition> seen;
  std::vector<Composition> unseen;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  std::vector<LabeledImage> test;
  SynthConfig config;
  std::uint64_t seed = 0;

  // Throws InvariantError when any dataset invariant is broken.
  void validate() const;

  bool is_seen(const Composition& c) const;
  bool is_unseen(const Composition& c) const;

  // Seen compositions followed by unseen ones (the closed-world test space).
  std::vector<Composition> test_compositions() const;

  // Train image ids per seen composition.
  std::map<Composition, std::vector<std::size_t>> train_index() const;
  std::map<Composition, std::size_t> image_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Deterministic in (config, seed). Throws ConfigError on invalid counts and
// GenerationError when primitive coverage is unsatisfiable.
Dataset synthesize(const SynthConfig& config, std::uint64_t seed);

// Mean pairwise Euclidean distance between the pooled attribute tokens of
// images sharing an attribute, split by same object vs different object.
struct EntanglementStats {
  double within_object = 0.0;
  double across_objects = 0.0;
};
EntanglementStats entanglement_statistic(const std::vector<LabeledImage>& images,
                                         std::size_t attr_tokens);

}  // namespace dcda

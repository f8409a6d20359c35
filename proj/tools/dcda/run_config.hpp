#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcda/dataset/dataset.hpp"
#include "dcda/model/model.hpp"
#include "dcda/trainer/trainer.hpp"

namespace dcda::cli {

struct DatasetSection {
  SynthConfig synth;
  std::uint64_t seed = 1;
  std::filesystem::path manifest;  // when set, load instead of synthesizing
};

struct EvaluatorSection {
  bool open_world = false;
  std::string split = "test";
  // "calibrate", "off", or a number.
  std::string feasibility_threshold = "calibrate";
  bool export_embeddings = false;
  bool export_scores = false;
};

struct RunConfig {
  DatasetSection dataset;
  ModelConfig model;
  TrainerConfig trainer;  // trainer.strategy is the `sampler` section
  EvaluatorSection evaluator;
  nlohmann::json tree;  // resolved configuration, every default filled in
};

// Every key with its default value, grouped by section.
nlohmann::json default_tree();

// Loads YAML (empty path: defaults only), applies `section.key=value`
// overrides and resolves relative paths against the config file's directory.
// Errors are ConfigError / ParseError with line and column where known.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides);

// Rebuilds the typed sections from a resolved tree.
RunConfig run_config_from_tree(const nlohmann::json& tree);

std::string to_yaml(const nlohmann::json& tree);

Dataset load_dataset(const DatasetSection& section);

}  // namespace dcda::cli

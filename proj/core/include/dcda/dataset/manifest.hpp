#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "dcda/dataset/dataset.hpp"

namespace dcda {

inline constexpr int kManifestVersion = 1;

// Writes `dir/meta.json` plus `dir/{train,val,test}.bin` (little-endian
// float64, row-major). The per-split index in meta.json lists
// [byte_offset, rows, cols, attr, obj] for each image.
void save_manifest(const Dataset& dataset, const std::filesystem::path& dir);

// Bit-exact inverse of save_manifest. Throws ParseError (with byte offset) on
// malformed input, VersionError on a format version mismatch, and
// InvariantError when the decoded dataset breaks a dataset invariant.
Dataset load_manifest(const std::filesystem::path& dir);

nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j);

}  // namespace dcda

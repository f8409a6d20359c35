#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dcda/backbone/parameters.hpp"

namespace dcda {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Parameters plus opaque named byte sections (optimizer moments, trainer
// state, config text).
struct Checkpoint {
  ParameterStore params;
  std::map<std::string, std::string> sections;
};

// Binary layout, little-endian:
//   "DCDACKPT" u32 version u32 n_tensors
//   per tensor: u32 name_len, name, u64 rows, u64 cols, u8 frozen, f64[rows*cols]
//   u32 n_sections, per section: u32 key_len, key, u64 len, bytes
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dcda

#include "dcda/dataset/manifest.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSplits[] = {"train", "val", "test"};

void put_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("short write to {}", path.string()));
}

json comps_to_json(const std::vector<Composition>& comps) {
  json arr = json::array();
  for (const auto& c : comps) arr.push_back({c.attr, c.obj});
  return arr;
}

const std::vector<LabeledImage>& split_of(const Dataset& d, std::string_view name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  return d.test;
}

std::vector<LabeledImage>& split_of(Dataset& d, std::string_view name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  return d.test;
}

}  // namespace

json to_json(const SynthConfig& c) {
  return json{{"n_attrs", c.n_attrs},
              {"n_objs", c.n_objs},
              {"n_seen", c.n_seen},
              {"n_unseen", c.n_unseen},
              {"images_per_comp", c.images_per_comp},
              {"val_images_per_comp", c.val_images_per_comp},
              {"test_images_per_comp", c.test_images_per_comp},
              {"image_tokens", c.image_tokens},
              {"raw_dim", c.raw_dim},
              {"latent_dim", c.latent_dim},
              {"noise_std", c.noise_std},
              {"latent_jitter", c.latent_jitter},
              {"entanglement_strength", c.entanglement_strength},
              {"imbalance",
               {{"kind", c.imbalance.kind == ImbalanceKind::zipf ? "zipf" : "none"},
                {"exponent", c.imbalance.exponent},
                {"min_images", c.imbalance.min_images}}}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  c.n_attrs = j.at("n_attrs").get<std::size_t>();
  c.n_objs = j.at("n_objs").get<std::size_t>();
  c.n_seen = j.at("n_seen").get<std::size_t>();
  c.n_unseen = j.at("n_unseen").get<std::size_t>();
  c.images_per_comp = j.at("images_per_comp").get<std::size_t>();
  c.val_images_per_comp = j.at("val_images_per_comp").get<std::size_t>();
  c.test_images_per_comp = j.at("test_images_per_comp").get<std::size_t>();
  c.image_tokens = j.at("image_tokens").get<std::size_t>();
  c.raw_dim = j.at("raw_dim").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.noise_std = j.at("noise_std").get<double>();
  c.latent_jitter = j.at("latent_jitter").get<double>();
  c.entanglement_strength = j.at("entanglement_strength").get<double>();
  const json& im = j.at("imbalance");
  const auto kind = im.at("kind").get<std::string>();
  if (kind == "zipf") {
    c.imbalance.kind = ImbalanceKind::zipf;
  } else if (kind == "none") {
    c.imbalance.kind = ImbalanceKind::none;
  } else {
    throw ConfigError(fmt::format("unknown imbalance kind '{}'", kind));
  }
  c.imbalance.exponent = im.at("exponent").get<double>();
  c.imbalance.min_images = im.at("min_images").get<std::size_t>();
  return c;
}

void save_manifest(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  json meta;
  meta["format"] = "dcda-manifest";
  meta["version"] = kManifestVersion;
  meta["seed"] = dataset.seed;
  meta["config"] = to_json(dataset.config);
  meta["vocabulary"] = {{"attributes", dataset.vocab.attributes},
                        {"objects", dataset.vocab.objects}};
  meta["seen"] = comps_to_json(dataset.seen);
  meta["unseen"] = comps_to_json(dataset.unseen);
  for (const char* split : kSplits) {
    std::string bytes;
    json index = json::array();
    for (const auto& img : split_of(dataset, split)) {
      index.push_back({bytes.size(), img.tokens.rows(), img.tokens.cols(), img.label.attr,
                       img.label.obj});
      for (double v : img.tokens.data()) put_le(bytes, v);
    }
    const std::string file = std::string(split) + ".bin";
    write_file(dir / file, bytes);
    meta["splits"][split] = {{"file", file}, {"bytes", bytes.size()}, {"index", index}};
  }
  write_file(dir / "meta.json", meta.dump(1) + "\n");
}

Dataset load_manifest(const fs::path& dir) {
  const std::string text = read_file(dir / "meta.json");
  json meta;
  try {
    meta = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("meta.json: {}", e.what()), e.byte);
  }
  Dataset ds;
  try {
    if (meta.at("format").get<std::string>() != "dcda-manifest") {
      throw ParseError("meta.json: not a dcda manifest", 0);
    }
    const int version = meta.at("version").get<int>();
    if (version != kManifestVersion) {
      throw VersionError(fmt::format("manifest version {} is not supported (expected {})",
                                     version, kManifestVersion));
    }
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.config = synth_config_from_json(meta.at("config"));
    ds.vocab.attributes = meta.at("vocabulary").at("attributes").get<std::vector<std::string>>();
    ds.vocab.objects = meta.at("vocabulary").at("objects").get<std::vector<std::string>>();
    for (const auto& p : meta.at("seen")) ds.seen.push_back({p.at(0), p.at(1)});
    for (const auto& p : meta.at("unseen")) ds.unseen.push_back({p.at(0), p.at(1)});
    for (const char* split : kSplits) {
      const json& s = meta.at("splits").at(split);
      const std::string bytes = read_file(dir / s.at("file").get<std::string>());
      const auto expected = s.at("bytes").get<std::size_t>();
      if (bytes.size() != expected) {
        throw ParseError(fmt::format("{}: file holds {} bytes, index expects {}",
                                     s.at("file").get<std::string>(), bytes.size(), expected),
                         bytes.size());
      }
      const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
      auto& images = split_of(ds, split);
      for (const auto& entry : s.at("index")) {
        const auto offset = entry.at(0).get<std::size_t>();
        const auto rows = entry.at(1).get<std::size_t>();
        const auto cols = entry.at(2).get<std::size_t>();
        if (offset + rows * cols * 8 > bytes.size()) {
          throw ParseError(fmt::format("{}: image {}x{} runs past end of file", split, rows, cols),
                           offset);
        }
        LabeledImage img{Matrix(rows, cols), {entry.at(3), entry.at(4)}};
        for (std::size_t i = 0; i < rows * cols; ++i) {
          img.tokens.data()[i] = get_le(raw + offset + 8 * i);
        }
        images.push_back(std::move(img));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("meta.json: {}", e.what()), 0);
  }
  ds.validate();
  return ds;
}

}  // namespace dcda

#include "run_config.hpp"

#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <regex>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "dcda/dataset/manifest.hpp"
#include "dcda/error.hpp"

namespace dcda::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Marks = std::map<std::string, YAML::Mark>;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

ConfigError located(const std::string& message, const Marks& marks, const std::string& path) {
  auto it = marks.find(path);
  if (it == marks.end() || it->second.is_null()) return ConfigError(message);
  return ConfigError(fmt::format("{} (line {}, column {})", message, it->second.line + 1,
                                 it->second.column + 1));
}

json scalar_value(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  if (s == "null" || s == "~" || s.empty()) return nullptr;
  static const std::regex integer(R"([-+]?[0-9]+)");
  if (std::regex_match(s, integer)) {
    try {
      if (s[0] == '-') return std::stoll(s);
      return std::stoull(s[0] == '+' ? s.substr(1) : s);
    } catch (const std::out_of_range&) {
      return s;
    }
  }
  if (s == ".inf" || s == "+.inf") return std::numeric_limits<double>::infinity();
  if (s == "-.inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  double d = std::strtod(s.c_str(), &end);
  if (end && *end == '\0') return d;
  return s;
}

json to_json_tree(const YAML::Node& n, const std::string& path, Marks& marks) {
  marks[path] = n.Mark();
  switch (n.Type()) {
    case YAML::NodeType::Map: {
      json out = json::object();
      for (const auto& kv : n) {
        const std::string key = kv.first.as<std::string>();
        const std::string p = join(path, key);
        if (out.contains(key)) {
          marks[p] = kv.first.Mark();
          throw located(fmt::format("duplicate key '{}'", p), marks, p);
        }
        out[key] = to_json_tree(kv.second, p, marks);
        marks[p] = kv.first.Mark();
      }
      return out;
    }
    case YAML::NodeType::Sequence: {
      json out = json::array();
      for (std::size_t i = 0; i < n.size(); ++i) {
        out.push_back(to_json_tree(n[i], join(path, std::to_string(i)), marks));
      }
      return out;
    }
    case YAML::NodeType::Scalar: return scalar_value(n);
    default: return nullptr;
  }
}

const char* kind_name(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "list";
  if (v.is_object()) return "mapping";
  return "null";
}

// Checks `user` against the defaults: unknown keys and type mismatches are
// errors. Numbers are accepted where a string is expected (slot ids,
// thresholds) and become strings.
void conform(json& user, const json& defaults, const std::string& path, const Marks& marks) {
  if (defaults.is_object()) {
    if (!user.is_object()) {
      throw located(fmt::format("'{}' must be a mapping", path), marks, path);
    }
    for (auto& [key, value] : user.items()) {
      const std::string p = join(path, key);
      if (!defaults.contains(key)) throw located(fmt::format("unknown key '{}'", p), marks, p);
      conform(value, defaults.at(key), p, marks);
    }
    return;
  }
  if (defaults.is_array()) {
    if (!user.is_array()) throw located(fmt::format("'{}' must be a list", path), marks, path);
    for (std::size_t i = 0; i < user.size(); ++i) {
      if (user[i].is_number()) user[i] = user[i].dump();
      if (!user[i].is_string()) {
        throw located(fmt::format("'{}' entries must be strings", path), marks, path);
      }
    }
    return;
  }
  if (defaults.is_string() && user.is_number()) {
    user = user.dump();
    return;
  }
  const bool ok = (defaults.is_boolean() && user.is_boolean()) ||
                  (defaults.is_string() && user.is_string()) ||
                  (defaults.is_number_float() && user.is_number()) ||
                  (defaults.is_number_unsigned() && user.is_number_unsigned()) ||
                  (defaults.is_number_integer() && !defaults.is_number_unsigned() &&
                   user.is_number_integer());
  if (!ok) {
    const char* want = defaults.is_number_unsigned() ? "non-negative integer" : kind_name(defaults);
    throw located(fmt::format("'{}' must be a {}, got {}", path, want, user.dump()), marks, path);
  }
}

void apply_override(json& tree, const json& defaults, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not section.key=value", spec));
  }
  const std::string path = spec.substr(0, eq);
  const std::string text = spec.substr(eq + 1);
  json value;
  try {
    YAML::Node n = YAML::Load(text);
    Marks unused;
    value = n.IsNull() && text.empty() ? json("") : to_json_tree(n, "", unused);
  } catch (const YAML::Exception& e) {
    throw ConfigError(fmt::format("override '{}': {}", spec, e.msg));
  }
  json* node = &tree;
  const json* def = &defaults;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot - begin);
    if (!def->is_object() || !def->contains(key)) {
      throw ConfigError(fmt::format("unknown key '{}' in override", path));
    }
    def = &def->at(key);
    if (dot == std::string::npos) {
      Marks none;
      conform(value, *def, path, none);
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    begin = dot + 1;
  }
}

template <typename T>
T get(const json& j, const char* key) {
  return j.at(key).get<T>();
}

}  // namespace

json default_tree() {
  json dataset = to_json(SynthConfig{});
  dataset["seed"] = std::uint64_t{1};
  dataset["manifest"] = "";
  json trainer = to_json(TrainerConfig{});
  json sampler = trainer.at("strategy");
  trainer.erase("strategy");
  EvaluatorSection ev;
  return {{"dataset", dataset},
          {"model", to_json(ModelConfig{})},
          {"sampler", sampler},
          {"trainer", trainer},
          {"evaluator",
           {{"open_world", ev.open_world},
            {"split", ev.split},
            {"feasibility_threshold", ev.feasibility_threshold},
            {"export_embeddings", ev.export_embeddings},
            {"export_scores", ev.export_scores}}}};
}

RunConfig run_config_from_tree(const json& tree) {
  RunConfig rc;
  rc.tree = tree;
  try {
    json ds = tree.at("dataset");
    rc.dataset.seed = get<std::uint64_t>(ds, "seed");
    rc.dataset.manifest = get<std::string>(ds, "manifest");
    ds.erase("seed");
    ds.erase("manifest");
    rc.dataset.synth = synth_config_from_json(ds);
    rc.model = model_config_from_json(tree.at("model"));
    json tr = tree.at("trainer");
    tr["strategy"] = tree.at("sampler");
    rc.trainer = trainer_config_from_json(tr);
    const json& ev = tree.at("evaluator");
    rc.evaluator.open_world = get<bool>(ev, "open_world");
    rc.evaluator.split = get<std::string>(ev, "split");
    rc.evaluator.feasibility_threshold = get<std::string>(ev, "feasibility_threshold");
    rc.evaluator.export_embeddings = get<bool>(ev, "export_embeddings");
    rc.evaluator.export_scores = get<bool>(ev, "export_scores");
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("configuration: {}", e.what()));
  }
  if (rc.evaluator.split != "val" && rc.evaluator.split != "test") {
    throw ConfigError(fmt::format("evaluator.split must be val or test, got '{}'",
                                  rc.evaluator.split));
  }
  const std::string& t = rc.evaluator.feasibility_threshold;
  if (t != "calibrate" && t != "off") {
    char* end = nullptr;
    std::strtod(t.c_str(), &end);
    if (!end || *end != '\0') {
      throw ConfigError(fmt::format(
          "evaluator.feasibility_threshold must be calibrate, off or a number, got '{}'", t));
    }
  }
  return rc;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  const json defaults = default_tree();
  json user = json::object();
  Marks marks;
  if (!path.empty()) {
    if (!fs::exists(path)) throw IoError(fmt::format("config file {} not found", path.string()));
    YAML::Node root;
    try {
      root = YAML::LoadFile(path.string());
    } catch (const YAML::ParserException& e) {
      throw ConfigError(fmt::format("{}: {} (line {}, column {})", path.string(), e.msg,
                                    e.mark.line + 1, e.mark.column + 1));
    } catch (const YAML::BadFile&) {
      throw IoError(fmt::format("cannot read config file {}", path.string()));
    }
    if (!root.IsNull()) user = to_json_tree(root, "", marks);
    conform(user, defaults, "", marks);
  }
  json tree = defaults;
  tree.merge_patch(user);
  for (const auto& o : overrides) apply_override(tree, defaults, o);

  std::string& manifest = tree["dataset"]["manifest"].get_ref<std::string&>();
  if (!manifest.empty() && fs::path(manifest).is_relative() && !path.empty()) {
    manifest = (fs::absolute(path).parent_path() / manifest).lexically_normal().string();
  }
  return run_config_from_tree(tree);
}

namespace {

void emit(YAML::Emitter& out, const json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (const auto& [k, v] : j.items()) {
      out << YAML::Key << k << YAML::Value;
      emit(out, v);
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : j) emit(out, v);
    out << YAML::EndSeq;
  } else if (j.is_string()) {
    out << YAML::DoubleQuoted << j.get<std::string>();
  } else if (j.is_number_float()) {
    const double d = j.get<double>();
    if (std::isinf(d)) {
      out << (d > 0 ? ".inf" : "-.inf");
    } else {
      std::string s = j.dump();
      // Keep floats recognizable as floats when read back.
      if (s.find_first_of(".eE") == std::string::npos) s += ".0";
      out << s;
    }
  } else {
    out << j.dump();
  }
}

}  // namespace

std::string to_yaml(const json& tree) {
  YAML::Emitter out;
  emit(out, tree);
  return std::string(out.c_str()) + "\n";
}

Dataset load_dataset(const DatasetSection& s) {
  if (!s.manifest.empty()) return load_manifest(s.manifest);
  return synthesize(s.synth, s.seed);
}

}  // namespace dcda::cli

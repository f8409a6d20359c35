#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dcda/dataset/manifest.hpp"
#include "dcda/error.hpp"
#include "dcda/evaluator/evaluator.hpp"
#include "dcda/graph/graph.hpp"
#include "dcda/sampler/sampler.hpp"
#include "dcda/trainer/trainer.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dcda::cli {
namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "YAML run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override, section.key=value (repeatable)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", c.seed, "seed override");
  cmd->add_option("--workers", c.workers, "worker thread cap")->check(CLI::PositiveNumber);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("write to {} failed", path.string()));
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  return fs::absolute(dir);
}

// Resolves the configuration and copies it (original and resolved) into
// the output directory.
RunConfig resolve(const Common& c, std::vector<std::string> extra, const fs::path& out_dir) {
  std::vector<std::string> sets = c.sets;
  if (c.workers) extra.push_back(fmt::format("trainer.workers={}", *c.workers));
  sets.insert(sets.end(), extra.begin(), extra.end());
  RunConfig rc = load_run_config(c.config, sets);
  if (!out_dir.empty()) {
    if (!c.config.empty()) fs::copy_file(c.config, out_dir / "config.source.yaml",
                                         fs::copy_options::overwrite_existing);
    write_text(out_dir / "config.yaml", to_yaml(rc.tree));
  }
  return rc;
}

std::vector<std::string> seed_sets(const Common& c, std::initializer_list<const char*> keys) {
  std::vector<std::string> out;
  if (!c.seed) return out;
  for (const char* k : keys) out.push_back(fmt::format("{}={}", k, *c.seed));
  return out;
}

EvalOptions eval_options(const RunConfig& rc) {
  EvalOptions o;
  o.open_world = rc.evaluator.open_world;
  o.workers = rc.trainer.workers;
  const std::string& t = rc.evaluator.feasibility_threshold;
  if (t == "calibrate") {
    o.feasibility_threshold = std::numeric_limits<double>::quiet_NaN();
  } else if (t == "off") {
    o.feasibility_threshold = -std::numeric_limits<double>::infinity();
  } else {
    o.feasibility_threshold = std::stod(t);
  }
  return o;
}

Split split_of(const RunConfig& rc) { return rc.evaluator.split == "val" ? Split::val : Split::test; }

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

int cmd_synth(const Common& c) {
  fs::path out = prepare_out(c.out);
  RunConfig rc = resolve(c, seed_sets(c, {"dataset.seed"}), out);
  if (!rc.dataset.manifest.empty()) throw ConfigError("synth-data ignores dataset.manifest; unset it");
  Dataset d = synthesize(rc.dataset.synth, rc.dataset.seed);
  save_manifest(d, out);
  print({{"manifest", out.string()},
         {"train", d.train.size()},
         {"val", d.val.size()},
         {"test", d.test.size()},
         {"seen", d.seen.size()},
         {"unseen", d.unseen.size()}});
  return 0;
}

std::vector<std::string> ablation_sets(const std::vector<std::string>& ablate) {
  std::vector<std::string> out;
  for (const auto& a : ablate) {
    if (a == "no-l") {
      out.push_back("model.ablation.drop_l=true");
    } else if (a == "no-v") {
      out.push_back("model.ablation.drop_v=true");
    } else if (a == "no-cross") {
      out.push_back("model.ablation.no_cross_l=true");
      out.push_back("model.ablation.no_cross_v=true");
    } else if (a == "no-cross-l") {
      out.push_back("model.ablation.no_cross_l=true");
    } else if (a == "no-cross-v") {
      out.push_back("model.ablation.no_cross_v=true");
    } else {
      throw ConfigError(fmt::format("unknown ablation '{}'", a));
    }
  }
  return out;
}

json report_json(const EvalReport& r) { return json::parse(metrics_json(r)); }

int cmd_train(const Common& c, const std::string& strategy, const std::vector<std::string>& ablate,
              const std::string& resume) {
  fs::path out = prepare_out(c.out);
  auto sets = seed_sets(c, {"model.seed", "sampler.seed", "trainer.shuffle_seed"});
  if (!strategy.empty()) sets.push_back("sampler.kind=" + strategy);
  for (auto& s : ablation_sets(ablate)) sets.push_back(s);
  RunConfig rc = resolve(c, sets, out);
  Dataset data = load_dataset(rc.dataset);
  DcdaModel model(rc.model, data.vocab);
  TrainOptions opts{out, {}, &std::cerr};
  if (!resume.empty()) opts.resume_from = fs::path(resume);
  TrainRun run = train(model, data, rc.trainer, opts);

  json result{{"epochs_run", run.epochs.size()},
              {"steps", run.steps},
              {"best_epoch", run.best_epoch},
              {"best_val_auc", run.best_val_auc},
              {"checkpoints",
               {{"initial", run.initial_checkpoint.string()},
                {"last", run.last_checkpoint.string()},
                {"best", run.best_checkpoint.string()}}}};
  if (run.grad_report) result["grad_verify"] = to_json(*run.grad_report);
  if (!data.test.empty()) {
    EvalReport rep = evaluate(model, data, Split::test, eval_options(rc));
    write_text(out / "metrics.json", metrics_json(rep) + "\n");
    result["test"] = report_json(rep);
    result["test"].erase("curve");
  }
  write_text(out / "train_summary.json", result.dump(2) + "\n");
  print(result);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, bool open_world,
             const std::string& split) {
  fs::path out = prepare_out(c.out);
  std::vector<std::string> sets;
  if (open_world) sets.push_back("evaluator.open_world=true");
  if (!split.empty()) sets.push_back("evaluator.split=" + split);
  RunConfig rc = resolve(c, sets, out);
  if (!fs::exists(checkpoint)) {
    throw IoError(fmt::format("checkpoint {} not found", checkpoint));
  }
  DcdaModel model = load_model(checkpoint);
  Dataset data = load_dataset(rc.dataset);
  if (!(model.vocab() == data.vocab)) {
    throw ConfigError("checkpoint vocabulary differs from the configured dataset");
  }
  EvalReport rep = evaluate(model, data, split_of(rc), eval_options(rc));
  write_text(out / "metrics.json", metrics_json(rep) + "\n");
  if (rc.evaluator.export_scores) {
    std::vector<std::string> labels;
    for (const auto& comp : rep.candidate_list) labels.push_back(to_string(comp, data.vocab));
    write_text(out / "scores.csv", score_matrix_csv(rep.scores, labels));
  }
  if (rc.evaluator.export_embeddings) {
    const auto& images = split_of(rc) == Split::val ? data.val : data.test;
    export_embeddings(model, images, data, out / "embeddings.csv");
  }
  json j = report_json(rep);
  j.erase("curve");
  print(j);
  return 0;
}

int cmd_graph(const Common& c) {
  fs::path out = prepare_out(c.out);
  RunConfig rc = resolve(c, seed_sets(c, {"dataset.seed"}), out);
  Dataset data = load_dataset(rc.dataset);
  CompGraph train_graph = build_compositional_graph(data.vocab, data.seen);
  CompGraph test_graph = build_compositional_graph(data.vocab, data.test_compositions());
  write_text(out / "edges.csv", edge_list_csv(train_graph, data.vocab));
  json hist = json::object();
  for (auto [deg, n] : degree_histogram(train_graph)) hist[std::to_string(deg)] = n;
  RelevanceMatrices rel = relevance_matrices(data.vocab, data.seen);
  auto rows = [](const Matrix& m) {
    json out = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (std::size_t k = 0; k < m.cols(); ++k) row.push_back(m(r, k));
      out.push_back(row);
    }
    return out;
  };
  json summary{{"attributes", data.vocab.n_attrs()},
               {"objects", data.vocab.n_objs()},
               {"seen_compositions", data.seen.size()},
               {"unseen_compositions", data.unseen.size()},
               {"train_graph", {{"nodes", train_graph.n_nodes()}, {"edges", train_graph.edge_count()}}},
               {"test_graph", {{"nodes", test_graph.n_nodes()}, {"edges", test_graph.edge_count()}}},
               {"open_world_compositions", data.vocab.n_attrs() * data.vocab.n_objs()},
               {"degree_histogram", hist}};
  write_text(out / "graph_summary.json", summary.dump(2) + "\n");
  write_text(out / "relevance.json",
             json{{"obj", rows(rel.obj)}, {"att", rows(rel.att)}}.dump() + "\n");
  print(summary);
  return 0;
}

int cmd_trace(const Common& c, const std::string& strategy, std::size_t batches) {
  fs::path out = prepare_out(c.out);
  auto sets = seed_sets(c, {"sampler.seed"});
  if (!strategy.empty()) sets.push_back("sampler.kind=" + strategy);
  RunConfig rc = resolve(c, sets, out);
  Dataset data = load_dataset(rc.dataset);
  AuxiliarySampler sampler(rc.trainer.strategy, data);
  std::ofstream trace(out / "trace.csv");
  if (!trace) throw IoError("cannot write trace.csv");
  trace << "batch,phase,target,axis,fallback,auxiliary,image_id\n";
  std::map<std::string, std::size_t> phases;
  std::size_t draws = 0, fallbacks = 0;
  const std::size_t bs = rc.trainer.batch_size;
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < bs; ++i) {
      const auto& target = data.train[(b * bs + i) % data.train.size()].label;
      for (Axis axis : {Axis::attr_sharing, Axis::obj_sharing}) {
        AuxiliaryDraw d = sampler.sample(target, axis);
        ++draws;
        fallbacks += d.fallback;
        ++phases[to_string(d.phase)];
        trace << fmt::format("{},{},{},{},{},{},{}\n", sampler.batch_index(), to_string(d.phase),
                             to_string(target, data.vocab),
                             axis == Axis::attr_sharing ? "attr" : "obj", d.fallback ? 1 : 0,
                             d.fallback ? "" : to_string(d.comp, data.vocab),
                             d.fallback ? std::string() : std::to_string(d.image_id));
      }
    }
    sampler.next_batch();
  }
  json summary{{"strategy", to_string(rc.trainer.strategy.kind)},
               {"batches", batches},
               {"draws", draws},
               {"fallbacks", fallbacks},
               {"phases", phases}};
  write_text(out / "trace_summary.json", summary.dump(2) + "\n");
  print(summary);
  return 0;
}

int cmd_grad_verify(const Common& c, const std::string& checkpoint) {
  fs::path out = c.out.empty() ? fs::path() : prepare_out(c.out);
  RunConfig rc = resolve(c, seed_sets(c, {"model.seed", "trainer.grad_verify.seed"}), out);
  Dataset data = load_dataset(rc.dataset);
  DcdaModel model = checkpoint.empty() ? DcdaModel(rc.model, data.vocab) : load_model(checkpoint);
  GradVerifyReport r = grad_verify(model, data, rc.trainer.grad_verify);
  json j = to_json(r);
  if (!out.empty()) write_text(out / "grad_verify.json", j.dump(2) + "\n");
  print(j);
  return r.passed() ? 0 : 3;
}

int exit_code(const std::string& kind) {
  if (kind == "config" || kind == "parse" || kind == "usage") return 2;
  return 1;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace
}  // namespace dcda::cli

int main(int argc, char** argv) {
  using namespace dcda::cli;
  CLI::App app{"Dual-modal compositional zero-shot learning toolkit", "dcda"};
  app.require_subcommand(1);

  Common synth_c, train_c, eval_c, graph_c, trace_c, grad_c;
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset manifest");
  add_common(synth, synth_c);

  auto* tr = app.add_subcommand("train", "train a model and evaluate it on the test split");
  add_common(tr, train_c);
  std::string strategy, trace_strategy, resume, checkpoint, grad_checkpoint, split;
  std::vector<std::string> ablate;
  tr->add_option("--strategy", strategy, "auxiliary sampling strategy")
      ->check(CLI::IsMember({"rd", "prg", "prg_n"}));
  tr->add_option("--ablate", ablate, "ablation (repeatable)")
      ->check(CLI::IsMember({"no-l", "no-v", "no-cross", "no-cross-l", "no-cross-v"}));
  tr->add_option("--resume", resume, "training checkpoint to resume from")
      ->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_c);
  bool open_world = false;
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_flag("--open-world", open_world, "score all attribute-object pairs");
  ev->add_option("--split", split, "val or test")->check(CLI::IsMember({"val", "test"}));

  auto* gi = app.add_subcommand("graph-inspect", "write compositional graph statistics");
  add_common(gi, graph_c);

  auto* st = app.add_subcommand("sample-trace", "record auxiliary sampler draws");
  add_common(st, trace_c);
  std::size_t batches = 20;
  st->add_option("--strategy", trace_strategy, "auxiliary sampling strategy")
      ->check(CLI::IsMember({"rd", "prg", "prg_n"}));
  st->add_option("--batches", batches, "number of batches to trace");

  auto* gv = app.add_subcommand("grad-verify", "finite-difference check of every trainable tensor");
  add_common(gv, grad_c, false);
  gv->add_option("--checkpoint", grad_checkpoint, "check a trained model instead of a fresh one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*tr) return cmd_train(train_c, strategy, ablate, resume);
    if (*ev) return cmd_eval(eval_c, checkpoint, open_world, split);
    if (*gi) return cmd_graph(graph_c);
    if (*st) return cmd_trace(trace_c, trace_strategy, batches);
    if (*gv) return cmd_grad_verify(grad_c, grad_checkpoint);
  } catch (const dcda::Error& e) {
    report_error(e.kind(), e.what());
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("io", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 0;
}

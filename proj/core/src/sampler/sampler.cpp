#include "dcda/sampler/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {

std::vector<ScoredComposition> sharing_candidates(const Composition& target, Axis axis,
                                                  const RelevanceMatrices& rel,
                                                  const std::vector<Composition>& seen) {
  std::vector<ScoredComposition> out;
  for (const auto& c : seen) {
    if (c == target) continue;
    if (axis == Axis::attr_sharing && c.attr == target.attr) {
      out.push_back({c, rel.obj(target.obj, c.obj)});
    } else if (axis == Axis::obj_sharing && c.obj == target.obj) {
      out.push_back({c, rel.att(target.attr, c.attr)});
    }
  }
  auto varying = [axis](const Composition& c) {
    return axis == Axis::attr_sharing ? c.obj : c.attr;
  };
  std::sort(out.begin(), out.end(), [&](const auto& x, const auto& y) {
    return varying(x.comp) < varying(y.comp);
  });
  return out;
}

RepresentativeSet representative_compositions(const Composition& target, Axis axis,
                                              std::size_t n, const RelevanceMatrices& rel,
                                              const std::vector<Composition>& seen) {
  if (n == 0) throw ConfigError("representative set size n must be >= 1");
  RepresentativeSet set{target, axis, {}, {}};
  std::vector<ScoredComposition> cands;
  for (auto& c : sharing_candidates(target, axis, rel, seen)) {
    if (c.score > 0.0) cands.push_back(c);
  }
  // Candidates arrive in ascending primitive order; stable sorts keep that
  // order among equal scores.
  auto by_desc = cands;
  std::stable_sort(by_desc.begin(), by_desc.end(),
                   [](const auto& x, const auto& y) { return x.score > y.score; });
  auto by_asc = cands;
  std::stable_sort(by_asc.begin(), by_asc.end(),
                   [](const auto& x, const auto& y) { return x.score < y.score; });
  by_desc.resize(std::min(n, by_desc.size()));
  by_asc.resize(std::min(n, by_asc.size()));
  set.most = std::move(by_desc);
  set.least = std::move(by_asc);
  return set;
}

std::vector<double> sampling_weights(SamplingGroup group, std::span<const double> scores) {
  if (scores.empty()) throw InvariantError("sampling_weights: empty score list");
  std::vector<double> w(scores.begin(), scores.end());
  for (double& s : w) {
    if (!(s > 0.0)) throw InvariantError("sampling_weights: scores must be positive");
    if (group == SamplingGroup::least) s = 1.0 / s;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& s : w) s /= total;
  return w;
}

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::rd: return "rd";
    case StrategyKind::prg: return "prg";
    case StrategyKind::prg_n: return "prg_n";
  }
  return "?";
}

StrategyKind strategy_from_string(const std::string& s) {
  if (s == "rd") return StrategyKind::rd;
  if (s == "prg") return StrategyKind::prg;
  if (s == "prg_n" || s == "prg+n") return StrategyKind::prg_n;
  throw ConfigError(fmt::format("unknown sampling strategy '{}' (rd, prg, prg_n)", s));
}

std::string to_string(SamplingPhase p) {
  switch (p) {
    case SamplingPhase::uniform: return "uniform";
    case SamplingPhase::most: return "most";
    case SamplingPhase::least: return "least";
    case SamplingPhase::count_weighted: return "count_weighted";
  }
  return "?";
}

AuxiliarySampler::AuxiliarySampler(StrategyConfig config, const Dataset& dataset)
    : config_(config),
      seen_(dataset.seen),
      rel_(relevance_matrices(dataset.vocab, dataset.seen)),
      train_index_(dataset.train_index()),
      rng_(config.seed) {
  if (config_.n == 0) throw ConfigError("sampler n must be >= 1");
}

SamplingPhase AuxiliarySampler::phase() const {
  switch (config_.kind) {
    case StrategyKind::rd: return SamplingPhase::uniform;
    case StrategyKind::prg:
      return batch_index_ % 2 == 0 ? SamplingPhase::most : SamplingPhase::least;
    case StrategyKind::prg_n: {
      static constexpr SamplingPhase cycle[4] = {SamplingPhase::most, SamplingPhase::least,
                                                 SamplingPhase::count_weighted,
                                                 SamplingPhase::least};
      return cycle[batch_index_ % 4];
    }
  }
  return SamplingPhase::uniform;
}

const std::vector<std::size_t>& AuxiliarySampler::images_of(const Composition& c) const {
  auto it = train_index_.find(c);
  if (it == train_index_.end() || it->second.empty()) {
    throw InvariantError(fmt::format("no training images for ({}, {})", c.attr, c.obj));
  }
  return it->second;
}

std::vector<std::pair<Composition, double>> AuxiliarySampler::distribution(
    const Composition& target, Axis axis) const {
  std::vector<std::pair<Composition, double>> dist;
  const SamplingPhase ph = phase();
  if (ph == SamplingPhase::uniform) {
    auto cands = sharing_candidates(target, axis, rel_, seen_);
    for (const auto& c : cands) {
      dist.emplace_back(c.comp, 1.0 / static_cast<double>(cands.size()));
    }
    return dist;
  }
  const RepresentativeSet reps =
      representative_compositions(target, axis, config_.n, rel_, seen_);
  if (ph == SamplingPhase::most || ph == SamplingPhase::least) {
    const auto& group = ph == SamplingPhase::most ? reps.most : reps.least;
    if (group.empty()) return dist;
    std::vector<double> scores;
    for (const auto& c : group) scores.push_back(c.score);
    const auto w = sampling_weights(
        ph == SamplingPhase::most ? SamplingGroup::most : SamplingGroup::least, scores);
    for (std::size_t i = 0; i < group.size(); ++i) dist.emplace_back(group[i].comp, w[i]);
    return dist;
  }
  // Count-weighted: p proportional to 1 / (number of training images).
  std::vector<Composition> pool;
  if (config_.count_weight_representatives_only) {
    for (const auto* g : {&reps.most, &reps.least}) {
      for (const auto& c : *g) {
        if (std::find(pool.begin(), pool.end(), c.comp) == pool.end()) pool.push_back(c.comp);
      }
    }
    std::sort(pool.begin(), pool.end());
  } else {
    for (const auto& c : sharing_candidates(target, axis, rel_, seen_)) pool.push_back(c.comp);
  }
  if (pool.empty()) return dist;
  double total = 0.0;
  for (const auto& c : pool) {
    const double w = 1.0 / static_cast<double>(images_of(c).size());
    dist.emplace_back(c, w);
    total += w;
  }
  for (auto& [c, w] : dist) w /= total;
  return dist;
}

AuxiliaryDraw AuxiliarySampler::sample(const Composition& target, Axis axis) {
  AuxiliaryDraw draw;
  draw.phase = phase();
  const auto dist = distribution(target, axis);
  if (dist.empty()) {
    draw.fallback = true;
    draw.comp = target;
    return draw;
  }
  std::vector<double> w;
  w.reserve(dist.size());
  for (const auto& [c, p] : dist) w.push_back(p);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  draw.comp = dist[pick(rng_)].first;
  const auto& images = images_of(draw.comp);
  std::uniform_int_distribution<std::size_t> img(0, images.size() - 1);
  draw.image_id = images[img(rng_)];
  return draw;
}

std::string AuxiliarySampler::serialize_state() const {
  std::ostringstream ss;
  ss << batch_index_ << ' ' << rng_;
  return ss.str();
}

void AuxiliarySampler::restore_state(const std::string& state) {
  std::istringstream ss(state);
  ss >> batch_index_ >> rng_;
  if (!ss) throw ParseError("sampler state is malformed", 0);
}

}  // namespace dcda

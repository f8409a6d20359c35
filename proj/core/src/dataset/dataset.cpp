#include "dcda/dataset/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {

void Vocabulary::validate() const {
  if (attributes.size() < 2 || objects.size() < 2) {
    throw InvariantError(fmt::format("vocabulary needs >= 2 attributes and objects, got {}/{}",
                                     attributes.size(), objects.size()));
  }
  auto unique = [](const std::vector<std::string>& names) {
    return std::set<std::string>(names.begin(), names.end()).size() == names.size();
  };
  if (!unique(attributes)) throw InvariantError("duplicate attribute name");
  if (!unique(objects)) throw InvariantError("duplicate object name");
}

std::string to_string(const Composition& c, const Vocabulary& vocab) {
  return vocab.attributes.at(c.attr) + " " + vocab.objects.at(c.obj);
}

bool Dataset::is_seen(const Composition& c) const {
  return std::binary_search(seen.begin(), seen.end(), c);
}

bool Dataset::is_unseen(const Composition& c) const {
  return std::binary_search(unseen.begin(), unseen.end(), c);
}

std::vector<Composition> Dataset::test_compositions() const {
  std::vector<Composition> all = seen;
  all.insert(all.end(), unseen.begin(), unseen.end());
  return all;
}

std::map<Composition, std::vector<std::size_t>> Dataset::train_index() const {
  std::map<Composition, std::vector<std::size_t>> index;
  for (std::size_t i = 0; i < train.size(); ++i) index[train[i].label].push_back(i);
  return index;
}

std::map<Composition, std::size_t> Dataset::image_counts() const {
  std::map<Composition, std::size_t> counts;
  for (const auto& c : seen) counts[c] = 0;
  for (const auto& img : train) ++counts[img.label];
  return counts;
}

void Dataset::validate() const {
  vocab.validate();
  auto check_list = [this](const std::vector<Composition>& comps, const char* name) {
    if (!std::is_sorted(comps.begin(), comps.end()) ||
        std::adjacent_find(comps.begin(), comps.end()) != comps.end()) {
      throw InvariantError(fmt::format("{} compositions must be sorted and unique", name));
    }
    for (const auto& c : comps) {
      if (c.attr >= vocab.n_attrs() || c.obj >= vocab.n_objs()) {
        throw InvariantError(fmt::format("{} composition ({}, {}) out of vocabulary bounds",
                                         name, c.attr, c.obj));
      }
    }
  };
  check_list(seen, "seen");
  check_list(unseen, "unseen");
  if (seen.empty()) throw InvariantError("no seen compositions");
  for (const auto& c : unseen) {
    if (is_seen(c)) {
      throw InvariantError(
          fmt::format("composition '{}' is both seen and unseen", to_string(c, vocab)));
    }
  }
  std::vector<bool> attr_cov(vocab.n_attrs(), false), obj_cov(vocab.n_objs(), false);
  for (const auto& c : seen) {
    attr_cov[c.attr] = true;
    obj_cov[c.obj] = true;
  }
  for (std::size_t a = 0; a < attr_cov.size(); ++a) {
    if (!attr_cov[a]) {
      throw InvariantError(
          fmt::format("attribute '{}' occurs in no seen composition", vocab.attributes[a]));
    }
  }
  for (std::size_t o = 0; o < obj_cov.size(); ++o) {
    if (!obj_cov[o]) {
      throw InvariantError(
          fmt::format("object '{}' occurs in no seen composition", vocab.objects[o]));
    }
  }
  std::size_t rows = 0, cols = 0;
  bool first = true;
  auto check_images = [&](const std::vector<LabeledImage>& images, const char* split,
                          bool seen_only) {
    for (const auto& img : images) {
      if (first) {
        rows = img.tokens.rows();
        cols = img.tokens.cols();
        first = false;
      } else if (img.tokens.rows() != rows || img.tokens.cols() != cols) {
        throw InvariantError(fmt::format("{} image has shape {}, expected {}x{}", split,
                                         img.tokens.shape_string(), rows, cols));
      }
      if (!img.tokens.all_finite()) {
        throw InvariantError(fmt::format("{} image has non-finite tokens", split));
      }
      const bool s = is_seen(img.label);
      if (seen_only ? !s : !(s || is_unseen(img.label))) {
        throw InvariantError(fmt::format("{} image labeled ({}, {}) outside its label space",
                                         split, img.label.attr, img.label.obj));
      }
    }
  };
  check_images(train, "train", true);
  check_images(val, "val", false);
  check_images(test, "test", false);
}

namespace {

Matrix gaussian(std::size_t r, std::size_t c, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& x : m.data()) x = n(rng);
  return m;
}

void validate_config(const SynthConfig& c) {
  if (c.n_attrs < 2 || c.n_objs < 2) {
    throw ConfigError(fmt::format("need >= 2 attributes and objects, got {}/{}", c.n_attrs,
                                  c.n_objs));
  }
  if (c.n_seen == 0) throw ConfigError("n_seen must be positive");
  if (c.n_seen + c.n_unseen > c.n_attrs * c.n_objs) {
    throw ConfigError(fmt::format("n_seen + n_unseen = {} exceeds {} possible pairs",
                                  c.n_seen + c.n_unseen, c.n_attrs * c.n_objs));
  }
  if (c.images_per_comp == 0) throw ConfigError("images_per_comp must be positive");
  if (c.image_tokens < 2 || c.raw_dim == 0 || c.latent_dim == 0) {
    throw ConfigError("image_tokens must be >= 2 and dimensions positive");
  }
  if (!(c.noise_std >= 0.0) || !(c.latent_jitter >= 0.0) ||
      !(c.entanglement_strength >= 0.0)) {
    throw ConfigError("noise_std, latent_jitter and entanglement_strength must be >= 0");
  }
  if (c.imbalance.kind == ImbalanceKind::zipf &&
      (c.imbalance.min_images == 0 || !(c.imbalance.exponent > 0.0))) {
    throw ConfigError("zipf imbalance needs min_images >= 1 and exponent > 0");
  }
}

// Fixed generative parameters shared by every image of a dataset.
struct Generator {
  std::vector<Eigen::VectorXd> attr_latent;
  std::vector<Eigen::VectorXd> obj_latent;
  std::vector<Eigen::MatrixXd> obj_transform;  // G_o
  std::vector<Eigen::VectorXd> obj_shift;      // u_o
  std::vector<Eigen::MatrixXd> attr_proj;      // per token, raw_dim x latent
  std::vector<Eigen::MatrixXd> obj_proj;
  std::vector<double> attr_weight;
  std::vector<double> obj_weight;
};

Generator make_generator(const SynthConfig& c, std::mt19937_64& rng) {
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(c.latent_dim));
  auto vec = [&](double sd) {
    return Eigen::VectorXd(gaussian(c.latent_dim, 1, sd, rng).eigen());
  };
  auto mat = [&](std::size_t r, std::size_t cc, double sd) {
    return Eigen::MatrixXd(gaussian(r, cc, sd, rng).eigen());
  };
  Generator g;
  for (std::size_t a = 0; a < c.n_attrs; ++a) g.attr_latent.push_back(vec(1.0));
  for (std::size_t o = 0; o < c.n_objs; ++o) {
    g.obj_latent.push_back(vec(1.0));
    g.obj_transform.push_back(mat(c.latent_dim, c.latent_dim, inv_sqrt_k));
    g.obj_shift.push_back(vec(1.0));
  }
  for (std::size_t t = 0; t < c.image_tokens; ++t) {
    g.attr_proj.push_back(mat(c.raw_dim, c.latent_dim, inv_sqrt_k));
    g.obj_proj.push_back(mat(c.raw_dim, c.latent_dim, inv_sqrt_k));
    const bool attr_token = t < c.attr_token_count();
    g.attr_weight.push_back(attr_token ? 1.0 : 0.25);
    g.obj_weight.push_back(attr_token ? 0.25 : 1.0);
  }
  return g;
}

LabeledImage render(const SynthConfig& c, const Generator& g, const Composition& comp,
                    std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const auto k = static_cast<Eigen::Index>(c.latent_dim);
  Eigen::VectorXd za = g.attr_latent[comp.attr];
  Eigen::VectorXd zo = g.obj_latent[comp.obj];
  for (Eigen::Index i = 0; i < k; ++i) {
    za(i) += c.latent_jitter * n(rng);
    zo(i) += c.latent_jitter * n(rng);
  }
  // Object-conditioned view of the attribute latent.
  const double s = c.entanglement_strength;
  Eigen::VectorXd za_seen =
      za + s * (g.obj_transform[comp.obj] * za + g.obj_shift[comp.obj]);
  LabeledImage img{Matrix(c.image_tokens, c.raw_dim), comp};
  for (std::size_t t = 0; t < c.image_tokens; ++t) {
    Eigen::VectorXd x = g.attr_weight[t] * (g.attr_proj[t] * za_seen) +
                        g.obj_weight[t] * (g.obj_proj[t] * zo);
    for (std::size_t j = 0; j < c.raw_dim; ++j) {
      img.tokens(t, j) = x(static_cast<Eigen::Index>(j)) + c.noise_std * n(rng);
    }
  }
  return img;
}

}  // namespace

Dataset synthesize(const SynthConfig& config, std::uint64_t seed) {
  validate_config(config);
  const std::size_t A = config.n_attrs, O = config.n_objs;
  if (config.n_seen < std::max(A, O)) {
    throw GenerationError(fmt::format(
        "{} seen compositions cannot cover {} attributes and {} objects", config.n_seen, A, O));
  }
  std::mt19937_64 rng(seed);

  Dataset ds;
  ds.config = config;
  ds.seed = seed;
  for (std::size_t a = 0; a < A; ++a) ds.vocab.attributes.push_back(fmt::format("attr{:03}", a));
  for (std::size_t o = 0; o < O; ++o) ds.vocab.objects.push_back(fmt::format("obj{:03}", o));

  // Greedy coverage: pair shuffled attributes with shuffled objects until both
  // lists are exhausted, then fill the rest uniformly.
  std::vector<std::size_t> attr_perm(A), obj_perm(O);
  std::iota(attr_perm.begin(), attr_perm.end(), 0);
  std::iota(obj_perm.begin(), obj_perm.end(), 0);
  std::shuffle(attr_perm.begin(), attr_perm.end(), rng);
  std::shuffle(obj_perm.begin(), obj_perm.end(), rng);
  std::set<Composition> seen;
  for (std::size_t i = 0; i < std::max(A, O); ++i) {
    seen.insert({attr_perm[i % A], obj_perm[i % O]});
  }
  std::vector<Composition> rest;
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t o = 0; o < O; ++o) {
      if (!seen.count({a, o})) rest.push_back({a, o});
    }
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  const std::size_t extra = config.n_seen - seen.size();
  seen.insert(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(extra));
  ds.seen.assign(seen.begin(), seen.end());
  ds.unseen.assign(rest.begin() + static_cast<std::ptrdiff_t>(extra),
                   rest.begin() + static_cast<std::ptrdiff_t>(extra + config.n_unseen));
  std::sort(ds.unseen.begin(), ds.unseen.end());

  std::vector<std::size_t> counts(ds.seen.size(), config.images_per_comp);
  if (config.imbalance.kind == ImbalanceKind::zipf) {
    std::vector<std::size_t> rank(ds.seen.size());
    std::iota(rank.begin(), rank.end(), 1);
    std::shuffle(rank.begin(), rank.end(), rng);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double c = static_cast<double>(config.images_per_comp) *
                       std::pow(static_cast<double>(rank[i]), -config.imbalance.exponent);
      counts[i] = std::max(config.imbalance.min_images,
                           static_cast<std::size_t>(std::llround(c)));
    }
  }

  const Generator gen = make_generator(config, rng);
  for (std::size_t i = 0; i < ds.seen.size(); ++i) {
    for (std::size_t j = 0; j < counts[i]; ++j) {
      ds.train.push_back(render(config, gen, ds.seen[i], rng));
    }
  }
  const std::vector<Composition> all = ds.test_compositions();
  for (const auto& c : all) {
    for (std::size_t j = 0; j < config.val_images_per_comp; ++j) {
      ds.val.push_back(render(config, gen, c, rng));
    }
  }
  for (const auto& c : all) {
    for (std::size_t j = 0; j < config.test_images_per_comp; ++j) {
      ds.test.push_back(render(config, gen, c, rng));
    }
  }
  ds.validate();
  return ds;
}

EntanglementStats entanglement_statistic(const std::vector<LabeledImage>& images,
                                         std::size_t attr_tokens) {
  std::vector<Eigen::VectorXd> pooled;
  pooled.reserve(images.size());
  for (const auto& img : images) {
    const std::size_t n = std::min(attr_tokens, img.tokens.rows());
    pooled.emplace_back(img.tokens.eigen().topRows(static_cast<Eigen::Index>(n))
                            .colwise()
                            .mean()
                            .transpose());
  }
  double within = 0.0, across = 0.0;
  std::size_t n_within = 0, n_across = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t j = i + 1; j < images.size(); ++j) {
      if (images[i].label.attr != images[j].label.attr) continue;
      const double d = (pooled[i] - pooled[j]).norm();
      if (images[i].label.obj == images[j].label.obj) {
        within += d;
        ++n_within;
      } else {
        across += d;
        ++n_across;
      }
    }
  }
  EntanglementStats s;
  if (n_within) s.within_object = within / static_cast<double>(n_within);
  if (n_across) s.across_objects = across / static_cast<double>(n_across);
  return s;
}

}  // namespace dcda

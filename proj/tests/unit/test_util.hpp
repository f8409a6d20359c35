#pragma once

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dcda/dataset/dataset.hpp"

namespace dcda::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                            double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& x : m.data()) x = n(rng);
  return m;
}

inline Vocabulary make_vocab(std::size_t attrs, std::size_t objs) {
  Vocabulary v;
  for (std::size_t i = 0; i < attrs; ++i) v.attributes.push_back("a" + std::to_string(i));
  for (std::size_t i = 0; i < objs; ++i) v.objects.push_back("o" + std::to_string(i));
  return v;
}

// Random nonempty composition set over a random vocabulary of at most
// max_a x max_o primitives.
inline std::pair<Vocabulary, std::vector<Composition>> random_comp_set(std::mt19937_64& rng,
                                                                      std::size_t max_a,
                                                                      std::size_t max_o) {
  std::size_t na = std::uniform_int_distribution<std::size_t>(1, max_a)(rng);
  std::size_t no = std::uniform_int_distribution<std::size_t>(1, max_o)(rng);
  std::bernoulli_distribution keep(0.4);
  std::set<Composition> comps;
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t o = 0; o < no; ++o) {
      if (keep(rng)) comps.insert({a, o});
    }
  }
  if (comps.empty()) comps.insert({0, 0});
  return {make_vocab(na, no), {comps.begin(), comps.end()}};
}

// Hand-built dataset with `counts[c]` 1x1 train images per seen composition.
inline Dataset hand_dataset(std::size_t attrs, std::size_t objs,
                            const std::map<Composition, std::size_t>& counts) {
  Dataset d;
  d.vocab = make_vocab(attrs, objs);
  for (const auto& [c, n] : counts) {
    d.seen.push_back(c);
    for (std::size_t i = 0; i < n; ++i) {
      d.train.push_back({Matrix(1, 1, static_cast<double>(d.train.size())), c});
    }
  }
  return d;
}

}  // namespace dcda::testing

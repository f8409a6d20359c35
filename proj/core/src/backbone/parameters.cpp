#include "dcda/backbone/parameters.hpp"

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {

Parameter& ParameterStore::add(std::string name, Matrix value, bool frozen) {
  if (index_.count(name)) throw ConfigError(fmt::format("duplicate parameter '{}'", name));
  if (!value.all_finite()) throw NumericError(fmt::format("parameter '{}' is not finite", name));
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value), frozen});
  return params_.back();
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

Parameter& ParameterStore::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError(fmt::format("unknown parameter '{}'", name));
  return params_[it->second];
}

const Parameter& ParameterStore::at(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> names;
  for (const auto& p : params_) {
    if (!p.frozen) names.push_back(p.name);
  }
  return names;
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (!p.frozen) n += p.value.size();
  }
  return n;
}

std::uint64_t ParameterStore::frozen_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    if (!p.frozen) continue;
    for (char c : p.name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    h = (h ^ content_hash(p.value)) * 1099511628211ULL;
  }
  return h;
}

Var ParamBinding::get(std::string_view name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Parameter& p = store_.at(name);
  Var v = tape_.leaf(p.value, track_ && !p.frozen);
  bound_.emplace(std::string(name), v);
  return v;
}

std::map<std::string, Matrix> ParamBinding::trainable_gradients() const {
  std::map<std::string, Matrix> grads;
  for (const auto& [name, v] : bound_) {
    if (!store_.contains(name) || store_.at(name).frozen) continue;
    grads.emplace(name, tape_.grad(v));
  }
  return grads;
}

}  // namespace dcda

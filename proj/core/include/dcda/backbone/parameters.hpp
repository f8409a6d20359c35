#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dcda/numerics/tape.hpp"

namespace dcda {

struct Parameter {
  std::string name;
  Matrix value;
  bool frozen = false;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

// Named parameter tensors in insertion order. Names are unique.
class ParameterStore {
 public:
  Parameter& add(std::string name, Matrix value, bool frozen);

  bool contains(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  std::vector<std::string> trainable_names() const;
  std::size_t trainable_scalar_count() const;

  // Hash over names and contents of every frozen tensor.
  std::uint64_t frozen_hash() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.params_ == b.params_;
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Lazily places parameters on a tape. Trainable tensors become gradient
// leaves (when `track` is set); frozen ones become constants. Overrides
// substitute a caller-owned Var for a named parameter.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParameterStore& store, bool track = true)
      : tape_(tape), store_(store), track_(track) {}

  Tape& tape() { return tape_; }
  const ParameterStore& store() const { return store_; }

  Var get(std::string_view name);
  void override_with(const std::string& name, Var v) { bound_[name] = v; }

  // Gradients of every bound trainable parameter (by name).
  std::map<std::string, Matrix> trainable_gradients() const;

 private:
  Tape& tape_;
  const ParameterStore& store_;
  bool track_;
  std::map<std::string, Var, std::less<>> bound_;
};

}  // namespace dcda

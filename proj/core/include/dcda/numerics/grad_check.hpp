#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dcda/numerics/tape.hpp"

namespace dcda {

// A differentiable computation: builds its output on the tape from the
// given input leaves.
using DifferentiableFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Seed for the fixed random cotangent that scalarizes the output.
  std::uint64_t seed = 0x5eed;
  // Check at most this many coordinates per input (0 = all). Coordinates are
  // drawn without replacement from the seed.
  std::size_t max_coords_per_input = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_input;  // relative error per input
  std::size_t coords_checked = 0;
};

// Compares the tape's vector-Jacobian product with central finite
// differences of <output, R> for a fixed random R. The relative error of an
// input is max_i |analytic_i - numeric_i| / max(max_i |analytic_i|,
// max_i |numeric_i|, 1e-12) over checked coordinates i.
GradCheckReport grad_check_report(const DifferentiableFn& fn,
                                  std::span<const Matrix> point,
                                  const GradCheckOptions& options = {});

double grad_check(const DifferentiableFn& fn, std::span<const Matrix> point,
                  double eps = 1e-5);

}  // namespace dcda

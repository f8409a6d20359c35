#include "dcda/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dcda/error.hpp"
#include "dcda/numerics/ops.hpp"

namespace dcda {
namespace {

double scalarized(const DifferentiableFn& fn, std::span<const Matrix> point,
                  const Matrix& cotangent) {
  Tape tape(false);
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const auto& m : point) leaves.push_back(tape.constant(m));
  const Matrix& out = fn(tape, leaves).value();
  return out.eigen().cwiseProduct(cotangent.eigen()).sum();
}

}  // namespace

GradCheckReport grad_check_report(const DifferentiableFn& fn,
                                  std::span<const Matrix> point,
                                  const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw NumericError("grad_check: eps must be positive");
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Tape tape(true);
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const auto& m : point) leaves.push_back(tape.variable(m));
  Var out = fn(tape, leaves);

  Matrix cotangent(out.rows(), out.cols());
  for (double& x : cotangent.data()) x = normal(rng);
  tape.backward(out, cotangent);

  GradCheckReport report;
  std::vector<Matrix> probe(point.begin(), point.end());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Matrix analytic = tape.grad(leaves[i]);
    std::vector<std::size_t> coords(point[i].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_input > 0 &&
        coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
    }
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t c : coords) {
      double& x = probe[i].data()[c];
      const double saved = x;
      x = saved + options.eps;
      const double plus = scalarized(fn, probe, cotangent);
      x = saved - options.eps;
      const double minus = scalarized(fn, probe, cotangent);
      x = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic.data()[c];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
    }
    const double rel = max_diff / std::max({max_a, max_n, 1e-12});
    report.per_input.push_back(rel);
    report.max_rel_error = std::max(report.max_rel_error, rel);
    report.coords_checked += coords.size();
  }
  return report;
}

double grad_check(const DifferentiableFn& fn, std::span<const Matrix> point, double eps) {
  GradCheckOptions options;
  options.eps = eps;
  return grad_check_report(fn, point, options).max_rel_error;
}

}  // namespace dcda

#include "dcda/numerics/matrix.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : m_(RowMajorXd::Constant(static_cast<Eigen::Index>(rows),
                              static_cast<Eigen::Index>(cols), fill)) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  if (data.size() != rows * cols) {
    throw DimensionError(fmt::format(
        "matrix data length {} does not equal {}x{}", data.size(), rows, cols));
  }
  m_.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (!data.empty()) std::memcpy(m_.data(), data.data(), data.size() * sizeof(double));
}

Matrix Matrix::identity(std::size_t n) {
  return Matrix(RowMajorXd::Identity(static_cast<Eigen::Index>(n),
                                     static_cast<Eigen::Index>(n)));
}

Matrix Matrix::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged initializer for Matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const { return m_.allFinite(); }

std::string Matrix::shape_string() const {
  return fmt::format("{}x{}", rows(), cols());
}

bool operator==(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return a.size() == 0 ||
         std::memcmp(a.m_.data(), b.m_.data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(fmt::format("max_abs_diff: {} vs {}", a.shape_string(),
                                     b.shape_string()));
  }
  if (a.size() == 0) return 0.0;
  return (a.eigen() - b.eigen()).cwiseAbs().maxCoeff();
}

std::uint64_t content_hash(const Matrix& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  const std::uint64_t shape[2] = {m.rows(), m.cols()};
  mix(shape, sizeof(shape));
  mix(m.data().data(), m.size() * sizeof(double));
  return h;
}

}  // namespace dcda

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dcda {

using RowMajorXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major matrix of doubles. Value type: copies are deep, moves are
// cheap. Storage is an Eigen matrix so kernels can use its vectorized paths.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  explicit Matrix(RowMajorXd values) : m_(std::move(values)) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return static_cast<std::size_t>(m_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(m_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(m_.size()); }
  bool empty() const { return m_.size() == 0; }

  double& operator()(std::size_t r, std::size_t c) {
    return m_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  double operator()(std::size_t r, std::size_t c) const {
    return m_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }

  std::span<double> data() { return {m_.data(), size()}; }
  std::span<const double> data() const { return {m_.data(), size()}; }
  std::span<const double> row(std::size_t r) const {
    return {m_.data() + r * cols(), cols()};
  }

  RowMajorXd& eigen() { return m_; }
  const RowMajorXd& eigen() const { return m_; }

  bool all_finite() const;
  std::string shape_string() const;

  // Bitwise equality of shape and contents.
  friend bool operator==(const Matrix& a, const Matrix& b);

 private:
  RowMajorXd m_;
};

// Largest |a - b| over entries; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

// FNV-1a over the raw bytes (shape included). Used to prove frozen tensors
// are untouched.
std::uint64_t content_hash(const Matrix& m);

}  // namespace dcda

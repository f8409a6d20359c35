#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dcda/error.hpp"
#include "dcda/numerics/grad_check.hpp"
#include "dcda/numerics/ops.hpp"

namespace dcda {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& x : m.data()) x = n(rng);
  return m;
}

TEST(Primitive, MatmulIdentity) {
  std::mt19937_64 rng(1);
  Matrix m = random_matrix(3, 4, rng);
  std::vector<Matrix> in{Matrix::identity(3), m};
  EXPECT_EQ(apply_primitive(Primitive::matmul, in), m);
}

TEST(Primitive, MatmulHandExpansion) {
  // [1 2; 3 4] [5; 6] = [1*5 + 2*6; 3*5 + 4*6]
  std::vector<Matrix> in{Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{5}, {6}})};
  Matrix out = apply_primitive(Primitive::matmul, in);
  EXPECT_EQ(out, Matrix::from_rows({{17}, {39}}));
}

TEST(Primitive, SoftmaxOfEqualLogitsIsUniform) {
  std::vector<Matrix> in{Matrix::from_rows({{0, 0}})};
  Matrix out = apply_primitive(Primitive::row_softmax, in);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(out(0, 1), 0.5);
}

TEST(Primitive, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Matrix> in{random_matrix(5, 9, rng, 10.0)};
    Matrix p = apply_primitive(Primitive::row_softmax, in);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double x : p.row(r)) {
        EXPECT_GT(x, 0.0);
        EXPECT_LT(x, 1.0);
        s += x;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Primitive, SoftmaxIsStableForLargeLogits) {
  std::vector<Matrix> in{Matrix::from_rows({{1000.0, 1000.0, -1000.0}})};
  Matrix p = apply_primitive(Primitive::row_softmax, in);
  EXPECT_NEAR(p(0, 0), 0.5, 1e-15);
  EXPECT_TRUE(p.all_finite());
}

TEST(Primitive, ShapeMismatchNamesOperands) {
  std::vector<Matrix> in{Matrix(2, 3), Matrix(2, 2)};
  try {
    apply_primitive(Primitive::matmul, in);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("2x2"), std::string::npos);
  }
  std::vector<Matrix> add_in{Matrix(2, 3), Matrix(3, 2)};
  EXPECT_THROW(apply_primitive(Primitive::add, add_in), DimensionError);
}

TEST(Primitive, NonFiniteInputIsANumericError) {
  Tape tape;
  Matrix bad(1, 2, 0.0);
  bad(0, 1) = std::nan("");
  EXPECT_THROW(tape.constant(bad), NumericError);
  Matrix inf(1, 1, INFINITY);
  std::vector<Matrix> in{inf};
  EXPECT_THROW(apply_primitive(Primitive::relu, in), NumericError);
}

TEST(Primitive, MatmulIsAssociative) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = random_matrix(3, 5, rng), b = random_matrix(5, 4, rng), c = random_matrix(4, 2, rng);
    std::vector<Matrix> ab{a, b};
    std::vector<Matrix> ab_c{apply_primitive(Primitive::matmul, ab), c};
    std::vector<Matrix> bc{b, c};
    std::vector<Matrix> a_bc{a, apply_primitive(Primitive::matmul, bc)};
    Matrix lhs = apply_primitive(Primitive::matmul, ab_c);
    Matrix rhs = apply_primitive(Primitive::matmul, a_bc);
    const double scale = std::max(1.0, lhs.eigen().cwiseAbs().maxCoeff());
    EXPECT_LE(max_abs_diff(lhs, rhs) / scale, 1e-9);
  }
}

TEST(Tape, BackwardIsLinearInCotangent) {
  std::mt19937_64 rng(11);
  Matrix a = random_matrix(3, 3, rng), b = random_matrix(3, 3, rng);
  Matrix s1 = random_matrix(3, 3, rng), s2 = random_matrix(3, 3, rng);
  auto grad_for = [&](const Matrix& seed) {
    Tape t;
    Var x = t.variable(a);
    Var y = row_softmax(matmul(x, t.constant(b)));
    t.backward(y, seed);
    return t.grad(x);
  };
  Matrix combined(RowMajorXd(2.0 * s1.eigen() - 3.0 * s2.eigen()));
  Matrix expected(RowMajorXd(2.0 * grad_for(s1).eigen() - 3.0 * grad_for(s2).eigen()));
  EXPECT_LE(max_abs_diff(grad_for(combined), expected), 1e-12);
}

TEST(Tape, NonTrackingTapeRecordsNoBackward) {
  Tape t(false);
  Var x = t.variable(Matrix(1, 1, 2.0));
  Var y = scale(x, 3.0);
  EXPECT_FALSE(t.requires_grad(y));
  EXPECT_THROW(t.backward(y), Error);
}

TEST(GradCheck, LinearMapIsExact) {
  std::mt19937_64 rng(5);
  Matrix w = random_matrix(4, 3, rng);
  DifferentiableFn fn = [&w](Tape& t, std::span<const Var> in) {
    return matmul(in[0], t.constant(w));
  };
  std::vector<Matrix> point{random_matrix(2, 4, rng)};
  EXPECT_LE(grad_check(fn, point), 1e-9);
}

TEST(GradCheck, SoftmaxOfMatmulAtSeededPoint) {
  std::mt19937_64 rng(42);
  DifferentiableFn fn = [](Tape&, std::span<const Var> in) {
    return row_softmax(matmul(in[0], in[1]));
  };
  std::vector<Matrix> point{random_matrix(4, 4, rng), random_matrix(4, 4, rng)};
  EXPECT_LE(grad_check(fn, point), 1e-6);
}

TEST(GradCheck, SoftmaxCrossEntropyOverEightClasses) {
  std::mt19937_64 rng(8);
  DifferentiableFn fn = [](Tape&, std::span<const Var> in) {
    return softmax_cross_entropy(in[0], {3, 0, 7});
  };
  std::vector<Matrix> point{random_matrix(3, 8, rng)};
  EXPECT_LE(grad_check(fn, point), 1e-6);
}

TEST(GradCheck, ForwardErrorsPropagate) {
  DifferentiableFn fn = [](Tape&, std::span<const Var> in) { return matmul(in[0], in[0]); };
  std::vector<Matrix> point{Matrix(2, 3, 1.0)};
  EXPECT_THROW(grad_check(fn, point), DimensionError);
}

TEST(GradCheck, RejectsNonPositiveEps) {
  DifferentiableFn fn = [](Tape&, std::span<const Var> in) { return relu(in[0]); };
  std::vector<Matrix> point{Matrix(1, 1, 1.0)};
  EXPECT_THROW(grad_check(fn, point, 0.0), NumericError);
}

// Every op in the library at three seeded points.
struct OpCase {
  const char* name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  DifferentiableFn fn;
};

std::vector<OpCase> all_op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", {{3, 4}, {4, 2}},
                   [](Tape&, std::span<const Var> v) { return matmul(v[0], v[1]); }});
  cases.push_back({"matmul_nt", {{3, 4}, {5, 4}},
                   [](Tape&, std::span<const Var> v) { return matmul_nt(v[0], v[1]); }});
  cases.push_back({"add", {{3, 4}, {3, 4}},
                   [](Tape&, std::span<const Var> v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", {{3, 4}, {3, 4}},
                   [](Tape&, std::span<const Var> v) { return sub(v[0], v[1]); }});
  cases.push_back({"scale", {{3, 4}},
                   [](Tape&, std::span<const Var> v) { return scale(v[0], -1.7); }});
  cases.push_back({"transpose", {{3, 4}},
                   [](Tape&, std::span<const Var> v) { return transpose(v[0]); }});
  cases.push_back({"row_softmax", {{3, 5}},
                   [](Tape&, std::span<const Var> v) { return row_softmax(v[0]); }});
  cases.push_back({"relu", {{4, 4}},
                   [](Tape&, std::span<const Var> v) { return relu(v[0]); }});
  cases.push_back({"dot", {{3, 4}, {3, 4}},
                   [](Tape&, std::span<const Var> v) { return dot(v[0], v[1]); }});
  cases.push_back({"hadamard", {{3, 4}, {3, 4}},
                   [](Tape&, std::span<const Var> v) { return hadamard(v[0], v[1]); }});
  cases.push_back({"sum", {{3, 4}},
                   [](Tape&, std::span<const Var> v) { return sum(v[0]); }});
  cases.push_back({"mul_scalar", {{1, 1}, {3, 4}},
                   [](Tape&, std::span<const Var> v) { return mul_scalar(v[0], v[1]); }});
  cases.push_back({"add_row_broadcast", {{3, 4}, {1, 4}},
                   [](Tape&, std::span<const Var> v) { return add_row_broadcast(v[0], v[1]); }});
  cases.push_back({"layer_norm_rows", {{3, 6}},
                   [](Tape&, std::span<const Var> v) { return layer_norm_rows(v[0]); }});
  cases.push_back({"l2_normalize_rows", {{3, 6}},
                   [](Tape&, std::span<const Var> v) { return l2_normalize_rows(v[0]); }});
  cases.push_back({"gather_rows", {{4, 3}},
                   [](Tape&, std::span<const Var> v) { return gather_rows(v[0], {2, 0, 2}); }});
  cases.push_back({"scatter_add_rows", {{4, 3}, {3, 3}},
                   [](Tape&, std::span<const Var> v) {
                     return scatter_add_rows(v[0], {1, 3, 1}, v[1]);
                   }});
  cases.push_back({"vstack", {{2, 3}, {3, 3}},
                   [](Tape&, std::span<const Var> v) { return vstack({v[0], v[1], v[0]}); }});
  cases.push_back({"slice_rows", {{5, 3}},
                   [](Tape&, std::span<const Var> v) { return slice_rows(v[0], 1, 3); }});
  cases.push_back({"segmented_attention", {{7, 4}, {7, 4}, {7, 3}},
                   [](Tape&, std::span<const Var> v) {
                     return segmented_attention(v[0], v[1], v[2], {{0, 3}, {3, 4}},
                                                {{0, 3}, {3, 4}}, false, 0.5);
                   }});
  cases.push_back({"segmented_attention_causal", {{7, 4}, {7, 4}, {7, 3}},
                   [](Tape&, std::span<const Var> v) {
                     return segmented_attention(v[0], v[1], v[2], {{0, 3}, {3, 4}},
                                                {{0, 3}, {3, 4}}, true, 0.5);
                   }});
  cases.push_back({"segmented_cross_attention", {{4, 4}, {6, 4}, {6, 3}},
                   [](Tape&, std::span<const Var> v) {
                     return segmented_attention(v[0], v[1], v[2], {{0, 2}, {2, 2}},
                                                {{0, 3}, {3, 3}}, false, 0.7);
                   }});
  cases.push_back({"softmax_cross_entropy", {{4, 6}},
                   [](Tape&, std::span<const Var> v) {
                     return softmax_cross_entropy(v[0], {0, 5, 2, 2});
                   }});
  return cases;
}

TEST(GradCheck, EveryOpAtThreeSeededPoints) {
  for (const auto& op : all_op_cases()) {
    for (std::uint64_t seed : {101u, 202u, 303u}) {
      std::mt19937_64 rng(seed);
      std::vector<Matrix> point;
      for (auto [r, c] : op.shapes) point.push_back(random_matrix(r, c, rng));
      const double err = grad_check(op.fn, point);
      EXPECT_LE(err, 1e-6) << op.name << " seed " << seed;
    }
  }
}

TEST(Ops, CausalAttentionIgnoresFutureKeys) {
  std::mt19937_64 rng(9);
  Matrix q = random_matrix(3, 2, rng), k = random_matrix(3, 2, rng);
  Matrix p = attention_weights(q, k, true, 1.0);
  EXPECT_EQ(p(0, 1), 0.0);
  EXPECT_EQ(p(0, 2), 0.0);
  EXPECT_EQ(p(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(p(0, 0), 1.0);
}

TEST(Ops, ScatterAddAccumulatesDuplicates) {
  Tape t(false);
  Var base = t.constant(Matrix(2, 1, 0.0));
  Var rows = t.constant(Matrix::from_rows({{1.0}, {2.0}}));
  Matrix out = scatter_add_rows(base, {1, 1}, rows).value();
  EXPECT_EQ(out(0, 0), 0.0);
  EXPECT_EQ(out(1, 0), 3.0);
}

}  // namespace
}  // namespace dcda

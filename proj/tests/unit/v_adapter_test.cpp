#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dcda/error.hpp"
#include "dcda/numerics/grad_check.hpp"
#include "dcda/v_adapter/v_adapter.hpp"
#include "test_util.hpp"

namespace dcda {
namespace {

using testing::random_matrix;

// Identity projections and an all-zero feed-forward (so FF(x) = x).
VBranchParams identity_branch(Tape& t, std::size_t d) {
  Var i = t.constant(Matrix::identity(d));
  return {i, i, i, t.constant(Matrix(d, 2 * d)), t.constant(Matrix(1, 2 * d)),
          t.constant(Matrix(2 * d, d)), t.constant(Matrix(1, d))};
}

VBranchParams random_branch(Tape& t, std::size_t d, std::mt19937_64& rng) {
  double sd = 1.0 / std::sqrt(static_cast<double>(d));
  return {t.constant(random_matrix(d, d, rng, sd)), t.constant(random_matrix(d, d, rng, sd)),
          t.constant(random_matrix(d, d, rng, sd)), t.constant(random_matrix(d, 2 * d, rng, sd)),
          t.constant(random_matrix(1, 2 * d, rng, 0.1)),
          t.constant(random_matrix(2 * d, d, rng, sd)), t.constant(random_matrix(1, d, rng, 0.1))};
}

std::vector<Segment> one(std::size_t len) { return {{0, len}}; }

TEST(CrossAttention, SingleTokenReturnsTarget) {
  Tape t;
  std::mt19937_64 rng(1);
  Matrix target = random_matrix(1, 3, rng), aux = random_matrix(1, 3, rng);
  auto r = cross_attention_pair(t.constant(target), t.constant(aux), identity_branch(t, 3), one(1));
  EXPECT_LT(max_abs_diff(r.refined_target.value(), target), 1e-15);
  EXPECT_LT(max_abs_diff(r.refined_aux.value(), aux), 1e-15);
}

TEST(CrossAttention, TwoByTwoHandOracle) {
  Tape t;
  Matrix aux = Matrix::identity(2);
  Matrix target(Matrix::identity(2).eigen() * 2.0);
  auto r = cross_attention_pair(t.constant(target), t.constant(aux), identity_branch(t, 2), one(2));
  // scores = aux target^T / sqrt(2) = sqrt(2) I
  double e = std::exp(std::sqrt(2.0));
  double p = e / (e + 1.0), q = 1.0 / (e + 1.0);
  Matrix expect = Matrix::from_rows({{2 * p, 2 * q}, {2 * q, 2 * p}});
  EXPECT_LT(max_abs_diff(r.refined_target.value(), expect), 1e-14);
}

TEST(CrossAttention, AttentionRowsSumToOne) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix q = random_matrix(8, 5, rng, 3.0), k = random_matrix(8, 5, rng, 3.0);
    Matrix w = attention_weights(q, k, false, 1.0 / std::sqrt(5.0));
    for (std::size_t r = 0; r < w.rows(); ++r) {
      EXPECT_NEAR(w.eigen().row(static_cast<Eigen::Index>(r)).sum(), 1.0, 1e-12);
    }
  }
}

TEST(CrossAttention, SwapConsistency) {
  Tape t;
  std::mt19937_64 rng(3);
  Matrix h = random_matrix(4, 6, rng);
  VBranchParams p = random_branch(t, 6, rng);
  // Distinct Vars with equal values exercise the full two-direction path.
  auto r = cross_attention_pair(t.constant(h), t.constant(h), p, one(4));
  EXPECT_TRUE(r.refined_target.value() == r.refined_aux.value());
  Var same = t.constant(h);
  auto s = cross_attention_pair(same, same, p, one(4));
  EXPECT_TRUE(s.refined_target.value() == r.refined_target.value());
}

TEST(CrossAttention, ShapeMismatch) {
  Tape t;
  EXPECT_THROW(cross_attention_pair(t.constant(Matrix(4, 3)), t.constant(Matrix(3, 3)),
                                    identity_branch(t, 3), one(4)),
               DimensionError);
  EXPECT_THROW(cross_attention_pair(t.constant(Matrix(4, 2)), t.constant(Matrix(4, 2)),
                                    identity_branch(t, 3), one(4)),
               DimensionError);
}

TEST(CrossAttention, BatchedMatchesPerImage) {
  Tape t;
  std::mt19937_64 rng(4);
  VBranchParams p = random_branch(t, 4, rng);
  Matrix a = random_matrix(6, 4, rng), b = random_matrix(6, 4, rng);
  auto batched = cross_attention_pair(t.constant(a), t.constant(b), p, {{0, 3}, {3, 3}});
  for (std::size_t i = 0; i < 2; ++i) {
    Var ai = slice_rows(t.constant(a), 3 * i, 3), bi = slice_rows(t.constant(b), 3 * i, 3);
    auto single = cross_attention_pair(ai, bi, p, one(3));
    EXPECT_LT(max_abs_diff(single.refined_target.value(),
                           slice_rows(batched.refined_target, 3 * i, 3).value()),
              1e-14);
    EXPECT_LT(max_abs_diff(single.refined_aux.value(),
                           slice_rows(batched.refined_aux, 3 * i, 3).value()),
              1e-14);
  }
}

TEST(VAdapter, ZeroBranchesPassTarget) {
  Tape t;
  std::mt19937_64 rng(5);
  VBranchParams p = identity_branch(t, 3);
  p.wv = t.constant(Matrix(3, 3));
  Matrix target = random_matrix(4, 3, rng);
  auto f = v_adapter_forward(t.constant(target), t.constant(random_matrix(4, 3, rng)),
                             t.constant(random_matrix(4, 3, rng)), p, p, one(4));
  EXPECT_EQ(f.h_attr.value().eigen().norm(), 0.0);
  EXPECT_EQ(f.h_obj.value().eigen().norm(), 0.0);
  EXPECT_EQ(f.combined.value().eigen().norm(), 0.0);
  EXPECT_TRUE(f.target_out.value() == target);
}

TEST(VAdapter, SelfAuxiliaryIsFinite) {
  Tape t;
  std::mt19937_64 rng(6);
  VBranchParams pa = random_branch(t, 5, rng), po = random_branch(t, 5, rng);
  Var target = t.constant(random_matrix(8, 5, rng));
  auto f = v_adapter_forward(target, target, target, pa, po, one(8));
  EXPECT_TRUE(f.target_out.value().all_finite());
  EXPECT_TRUE(f.refined_aux_attr.value() == f.h_attr.value());
  Matrix sum(f.h_attr.value().eigen() + f.h_obj.value().eigen());
  EXPECT_TRUE(f.combined.value() == sum);
}

TEST(VAdapter, BranchIndependence) {
  std::mt19937_64 rng(7);
  Matrix target = random_matrix(4, 3, rng), aa = random_matrix(4, 3, rng),
         ao = random_matrix(4, 3, rng);
  Tape t;
  std::mt19937_64 r1(8), r2(9);
  VBranchParams pa = random_branch(t, 3, r1), po = random_branch(t, 3, r2);
  auto base = v_adapter_forward(t.constant(target), t.constant(aa), t.constant(ao), pa, po, one(4));
  VBranchParams pa2 = pa;
  Matrix wq = pa.wq.value();
  wq(0, 0) += 0.5;
  pa2.wq = t.constant(wq);
  auto moved = v_adapter_forward(t.constant(target), t.constant(aa), t.constant(ao), pa2, po, one(4));
  EXPECT_TRUE(moved.h_obj.value() == base.h_obj.value());
  EXPECT_FALSE(moved.h_attr.value() == base.h_attr.value());
}

TEST(VAdapter, GradCheckAllBranchParams) {
  for (std::uint64_t seed : {1, 2, 3}) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 4;
    std::vector<Matrix> point{random_matrix(6, d, rng), random_matrix(6, d, rng),
                              random_matrix(6, d, rng)};
    for (int b = 0; b < 2; ++b) {
      point.push_back(random_matrix(d, d, rng, 0.5));
      point.push_back(random_matrix(d, d, rng, 0.5));
      point.push_back(random_matrix(d, d, rng, 0.5));
      point.push_back(random_matrix(d, 2 * d, rng, 0.5));
      point.push_back(random_matrix(1, 2 * d, rng, 0.5));
      point.push_back(random_matrix(2 * d, d, rng, 0.5));
      point.push_back(random_matrix(1, d, rng, 0.5));
    }
    DifferentiableFn fn = [](Tape&, std::span<const Var> in) {
      VBranchParams pa{in[3], in[4], in[5], in[6], in[7], in[8], in[9]};
      VBranchParams po{in[10], in[11], in[12], in[13], in[14], in[15], in[16]};
      auto f = v_adapter_forward(in[0], in[1], in[2], pa, po, {{0, 3}, {3, 3}});
      return vstack({f.target_out, f.refined_aux_attr, f.refined_aux_obj});
    };
    EXPECT_LE(grad_check(fn, point), 1e-5) << "seed " << seed;
  }
}

TEST(VAdapter, ParamsPerSiteAndBranch) {
  ParameterStore store;
  std::mt19937_64 rng(10);
  add_v_adapter_params(store, 5, Slot::after_block, 8, 2, 0.1, rng);
  EXPECT_EQ(store.trainable_names().size(), 14u);
  Tape t;
  ParamBinding params(t, store);
  VBranchParams a = bind_v_branch(params, 5, Slot::after_block, "attr");
  EXPECT_EQ(a.w1.cols(), 16u);
  EXPECT_THROW(bind_v_branch(params, 4, Slot::after_block, "attr"), ConfigError);
}

}  // namespace
}  // namespace dcda

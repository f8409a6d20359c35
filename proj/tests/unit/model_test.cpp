#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dcda/backbone/checkpoint.hpp"
#include "dcda/error.hpp"
#include "dcda/model/model.hpp"
#include "dcda/numerics/grad_check.hpp"
#include "test_util.hpp"

namespace dcda {
namespace {

using testing::random_matrix;

ModelConfig tiny_config() {
  ModelConfig c;
  c.backbone.blocks = 3;
  c.backbone.text_dim = 8;
  c.backbone.image_dim = 8;
  c.backbone.image_len = 4;
  c.backbone.raw_dim = 5;
  c.adapter_depth = 2;
  c.adapter_init_scale = 0.5;
  c.temperature = 0.5;
  return c;
}

struct Toy {
  ModelConfig config = tiny_config();
  Vocabulary vocab = testing::make_vocab(3, 3);
  std::vector<Composition> seen{{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 0}};
  std::vector<Matrix> raw;
  std::vector<Matrix> cached;

  explicit Toy(std::size_t n_images = 4) {
    std::mt19937_64 rng(42);
    DcdaModel m(config, vocab);
    for (std::size_t i = 0; i < n_images; ++i) {
      raw.push_back(random_matrix(config.backbone.image_len, config.backbone.raw_dim, rng));
      cached.push_back(m.cache_image(raw.back()));
    }
  }

  TrainBatch batch() const {
    TrainBatch b;
    for (std::size_t i = 0; i < cached.size(); ++i) {
      b.images.target.push_back(&cached[i]);
      b.images.aux_attr.push_back(&cached[(i + 1) % cached.size()]);
      b.images.aux_obj.push_back(&cached[(i + 2) % cached.size()]);
      b.labels.push_back(i % seen.size());
      b.aux_attr_labels.push_back((i + 1) % seen.size());
      b.aux_obj_labels.push_back((i + 2) % seen.size());
    }
    return b;
  }
};

Matrix unit(std::size_t d, std::size_t i) {
  Matrix m(1, d);
  m(0, i) = 1.0;
  return m;
}

TEST(Score, ClosedForms) {
  Matrix e0 = unit(6, 0);
  EXPECT_DOUBLE_EQ(compatibility_score(e0, unit(6, 1), unit(6, 2), e0, unit(6, 3), unit(6, 4),
                                       {2.5, 0.0, 0.0}),
                   2.5);
  EXPECT_DOUBLE_EQ(compatibility_score(unit(6, 0), unit(6, 1), unit(6, 2), unit(6, 3),
                                       unit(6, 4), unit(6, 5), {}),
                   0.0);
  // cosines 0.5, 0.25, 0.25
  auto at = [](double c) { return Matrix::from_rows({{c, std::sqrt(1 - c * c)}}); };
  Matrix x = Matrix::from_rows({{1.0, 0.0}});
  EXPECT_NEAR(compatibility_score(x, x, x, at(0.5), at(0.25), at(0.25), {}), 1.0, 1e-15);
  EXPECT_THROW(compatibility_score(x, x, x, x, x, unit(3, 0), {}), DimensionError);
}

TEST(Model, ConfigValidation) {
  ModelConfig c = tiny_config();
  c.adapter_depth = 4;
  EXPECT_THROW(DcdaModel(c, testing::make_vocab(2, 2)), ConfigError);
  c = tiny_config();
  c.l_slots = {Slot::after_ff, Slot::after_ff};
  EXPECT_THROW(DcdaModel(c, testing::make_vocab(2, 2)), ConfigError);
  c = tiny_config();
  c.temperature = 0.0;
  EXPECT_THROW(DcdaModel(c, testing::make_vocab(2, 2)), ConfigError);
}

TEST(Model, ParameterLayout) {
  Toy t;
  DcdaModel m(t.config, t.vocab);
  const auto& p = m.params();
  // two adapter blocks, L at two slots with 2 layers, V with 2 branches of 7
  EXPECT_TRUE(p.contains("l_adapter.b1.s3.w0"));
  EXPECT_TRUE(p.contains("l_adapter.b2.s2.w1"));
  EXPECT_FALSE(p.contains("l_adapter.b0.s3.w0"));
  EXPECT_TRUE(p.contains("v_adapter.b2.s1.obj.wq"));
  EXPECT_EQ(p.trainable_names().size(), 1u + 2 * 2 * 2 + 2 * 14 + 3);
  EXPECT_EQ(p.at("score.alpha").value(0, 0), 1.0);
  EXPECT_EQ(m.first_adapter_block(), 1u);
}

TEST(Model, SingletonCandidateLossIsZero) {
  Toy t;
  DcdaModel m(t.config, t.vocab);
  TextContext ctx = m.text_context({{0, 0}});
  TrainBatch b = t.batch();
  std::fill(b.labels.begin(), b.labels.end(), 0);
  Tape tape;
  ParamBinding p(tape, m.params());
  EXPECT_EQ(m.training_loss(p, ctx, b).value()(0, 0), 0.0);
}

TEST(Model, EqualScoresGiveLn2) {
  Toy t;
  t.config.temperature = 1.0;
  DcdaModel m(t.config, t.vocab);
  for (const char* w : {"score.alpha", "score.beta", "score.gamma"}) {
    m.params().at(w).value(0, 0) = 0.0;
  }
  TextContext ctx = m.text_context({{0, 0}, {1, 1}});
  TrainBatch b = t.batch();
  for (auto& l : b.labels) l %= 2;
  Tape tape;
  ParamBinding p(tape, m.params());
  EXPECT_NEAR(m.training_loss(p, ctx, b).value()(0, 0), std::log(2.0), 1e-15);
}

TEST(Model, LabelsOutsideCandidatesRejected) {
  Toy t;
  DcdaModel m(t.config, t.vocab);
  TextContext ctx = m.text_context(t.seen);
  EXPECT_THROW(label_columns(ctx, {{2, 2}}), InvariantError);
  EXPECT_EQ(label_columns(ctx, {{1, 2}, {0, 0}}), (std::vector<std::size_t>{3, 0}));
  TrainBatch b = t.batch();
  b.labels[0] = 99;
  Tape tape;
  ParamBinding p(tape, m.params());
  EXPECT_THROW(m.training_loss(p, ctx, b), InvariantError);
  EXPECT_THROW(m.text_context({}), InvariantError);
}

TEST(Model, GradCheckScoreWeightsAndAdapters) {
  Toy t;
  DcdaModel m(t.config, t.vocab);
  TextContext ctx = m.text_context(t.seen);
  TrainBatch b = t.batch();
  std::vector<std::string> names{"score.alpha", "score.beta", "score.gamma",
                                 "l_adapter.b2.s3.w0", "v_adapter.b1.s1.attr.wq",
                                 "text.tok_emb"};
  std::vector<Matrix> point;
  for (const auto& n : names) point.push_back(m.params().at(n).value);
  DifferentiableFn fn = [&](Tape& tape, std::span<const Var> in) {
    ParamBinding p(tape, m.params());
    for (std::size_t i = 0; i < names.size(); ++i) p.override_with(names[i], in[i]);
    return m.training_loss(p, ctx, b);
  };
  GradCheckReport r = grad_check_report(fn, point);
  for (std::size_t i = 0; i < names.size(); ++i) {
    EXPECT_LE(r.per_input[i], 1e-5) << names[i];
  }
}

TEST(Model, EveryTrainableParameterGetsGradient) {
  Toy t;
  DcdaModel m(t.config, t.vocab);
  TextContext ctx = m.text_context(t.seen);
  Tape tape;
  ParamBinding p(tape, m.params());
  tape.backward(m.training_loss(p, ctx, t.batch()));
  auto grads = p.trainable_gradients();
  for (const auto& name : m.params().trainable_names()) {
    ASSERT_TRUE(grads.count(name)) << name;
    EXPECT_GT(grads.at(name).eigen().norm(), 0.0) << name;
  }
}

TEST(Model, SelfAuxiliaryEqualsInferencePathAtOneSite) {
  // With several sites the auxiliary stream only receives its own
  // refinement, so the paths coincide only for a single V site.
  Toy t;
  t.config.adapter_depth = 1;
  DcdaModel m(t.config, t.vocab);
  ImageBatch self, cross;
  for (const auto& c : t.cached) {
    self.target.push_back(&c);
    cross.target.push_back(&c);
    cross.aux_attr.push_back(&c);
    cross.aux_obj.push_back(&c);
  }
  Tape tape;
  ParamBinding p(tape, m.params());
  ImageFeatures a = m.encode_images(p, self, false);
  ImageFeatures b = m.encode_images(p, cross, true);
  EXPECT_LT(max_abs_diff(a.full.value(), b.full.value()), 1e-12);
  EXPECT_LT(max_abs_diff(a.attr.value(), b.attr.value()), 1e-12);
  EXPECT_LT(max_abs_diff(a.obj.value(), b.obj.value()), 1e-12);
  EXPECT_FALSE(a.attr.value() == a.obj.value());
}

TEST(Model, ZeroAdaptersReduceToFrozenPath) {
  Toy t;
  t.config.adapter_init_scale = 0.0;
  DcdaModel m(t.config, t.vocab);
  Tape tape;
  ParamBinding p(tape, m.params());
  ImageBatch batch;
  for (const auto& c : t.cached) batch.target.push_back(&c);
  ImageFeatures f = m.encode_images(p, batch, false);
  for (std::size_t i = 0; i < t.raw.size(); ++i) {
    Matrix frozen = m.frozen_image_features(t.raw[i]);
    for (std::size_t c = 0; c < frozen.cols(); ++c) {
      EXPECT_NEAR(f.full.value()(i, c), frozen(0, c), 1e-12);
      EXPECT_NEAR(f.attr.value()(i, c), frozen(0, c), 1e-12);
    }
  }

  // Text side: L-Adapters with a zero last layer leave prompts untouched.
  ModelConfig no_l = t.config;
  no_l.ablation.drop_l = true;
  DcdaModel plain(no_l, t.vocab);
  TextContext ctx = m.text_context(t.seen);
  Tape t2;
  ParamBinding p1(t2, m.params()), p2(t2, plain.params());
  TextFeatures x = m.encode_text(p1, ctx), y = plain.encode_text(p2, ctx);
  EXPECT_LT(max_abs_diff(x.comp.value(), y.comp.value()), 1e-12);
}

TEST(Model, AblationsRunEndToEnd) {
  Toy t;
  for (int mask = 0; mask < 16; ++mask) {
    ModelConfig c = t.config;
    c.ablation = {bool(mask & 1), bool(mask & 2), bool(mask & 4), bool(mask & 8)};
    DcdaModel m(c, t.vocab);
    std::vector<Matrix> cached;
    for (const auto& r : t.raw) cached.push_back(m.cache_image(r));
    TrainBatch b;
    for (std::size_t i = 0; i < cached.size(); ++i) {
      b.images.target.push_back(&cached[i]);
      b.images.aux_attr.push_back(&cached[(i + 1) % cached.size()]);
      b.images.aux_obj.push_back(&cached[(i + 2) % cached.size()]);
      b.labels.push_back(i % t.seen.size());
    }
    TextContext ctx = m.text_context(t.seen);
    Tape tape;
    ParamBinding p(tape, m.params());
    Var loss = m.training_loss(p, ctx, b);
    EXPECT_TRUE(std::isfinite(loss.value()(0, 0)));
    tape.backward(loss);
    if (c.ablation.drop_v) {
      EXPECT_EQ(m.image_cache_end(), c.backbone.blocks);
      ImageFeatures f = m.encode_images(p, b.images, true);
      EXPECT_TRUE(f.attr.value() == f.full.value());
      EXPECT_TRUE(f.obj.value() == f.full.value());
    }
    if (c.ablation.drop_l) EXPECT_FALSE(m.params().contains("l_adapter.b2.s3.w0"));
  }
}

TEST(Model, NoCrossVIgnoresAuxiliaries) {
  Toy t;
  t.config.ablation.no_cross_v = true;
  DcdaModel m(t.config, t.vocab);
  TextContext ctx = m.text_context(t.seen);
  TrainBatch a = t.batch(), b = t.batch();
  std::reverse(b.images.aux_attr.begin(), b.images.aux_attr.end());
  Tape tape;
  ParamBinding p(tape, m.params());
  EXPECT_EQ(m.training_loss(p, ctx, a).value()(0, 0), m.training_loss(p, ctx, b).value()(0, 0));
}

TEST(Model, NoCrossLUsesIdentityGraph) {
  Toy t;
  ModelConfig iso = t.config;
  iso.ablation.no_cross_l = true;
  DcdaModel full(t.config, t.vocab), alone(iso, t.vocab);
  TextContext big = full.text_context(t.seen);
  TextContext small = full.text_context({{0, 0}});
  Tape tape;
  ParamBinding p1(tape, alone.params()), p2(tape, full.params());
  // Without neighbors a composition's text feature ignores the rest of the graph.
  Var a = alone.encode_text(p1, big).comp, b = alone.encode_text(p1, small).comp;
  EXPECT_LT(max_abs_diff(gather_rows(a, {0}).value(), b.value()), 1e-12);
  Var c = full.encode_text(p2, big).comp, d = full.encode_text(p2, small).comp;
  EXPECT_GT(max_abs_diff(gather_rows(c, {0}).value(), d.value()), 1e-9);
}

TEST(Model, ScoreAuxiliariesFlagAddsTerms) {
  Toy t;
  DcdaModel base(t.config, t.vocab);
  t.config.score_auxiliaries = true;
  DcdaModel with(t.config, t.vocab);
  TextContext ctx = base.text_context(t.seen);
  Tape tape;
  ParamBinding p1(tape, base.params()), p2(tape, with.params());
  double l1 = base.training_loss(p1, ctx, t.batch()).value()(0, 0);
  double l2 = with.training_loss(p2, ctx, t.batch()).value()(0, 0);
  EXPECT_NE(l1, l2);
}

TEST(Model, PredictRanksAndIsOrderInvariant) {
  Toy t;
  DcdaModel m(t.config, t.vocab);
  auto single = m.predict(t.raw[0], m.text_context({{1, 2}}));
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].first, (Composition{1, 2}));

  std::vector<Composition> all;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t o = 0; o < 3; ++o) all.push_back({a, o});
  }
  auto ranked = m.predict(t.raw[1], m.text_context(all));
  std::vector<Composition> shuffled = all;
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto again = m.predict(t.raw[1], m.text_context(shuffled));
  ASSERT_EQ(ranked.size(), 9u);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    EXPECT_EQ(ranked[i].first, again[i].first);
    EXPECT_NEAR(ranked[i].second, again[i].second, 1e-12);
    if (i) EXPECT_GE(ranked[i - 1].second, ranked[i].second);
  }
  Matrix s = m.score_matrix(m.text_context(all), {&t.cached[1]});
  EXPECT_EQ(s(0, m.text_context(all).column(ranked[0].first)), ranked[0].second);
}

TEST(Model, CheckpointRoundTripAndMismatch) {
  Toy t;
  DcdaModel m(t.config, t.vocab);
  m.params().at("score.beta").value(0, 0) = 0.7;
  Checkpoint c = decode_checkpoint(encode_checkpoint({m.params(), {}}));
  DcdaModel back(t.config, t.vocab, c.params);
  EXPECT_TRUE(back.params() == m.params());

  ModelConfig other = t.config;
  other.ablation.drop_v = true;
  EXPECT_THROW(DcdaModel(other, t.vocab, c.params), InvariantError);
  ModelConfig reseeded = t.config;
  reseeded.backbone.seed += 1;
  EXPECT_THROW(DcdaModel(reseeded, t.vocab, c.params), InvariantError);
}

TEST(Model, MismatchedWidthsUseFrozenHead) {
  Toy t;
  ModelConfig c = t.config;
  c.backbone.image_dim = 6;
  DcdaModel m(c, t.vocab);
  EXPECT_TRUE(m.params().at("head.image").frozen);
  Matrix cached = m.cache_image(t.raw[0]);
  Matrix s = m.score_matrix(m.text_context(t.seen), {&cached});
  EXPECT_EQ(s.cols(), t.seen.size());
  EXPECT_TRUE(s.all_finite());
}

}  // namespace
}  // namespace dcda

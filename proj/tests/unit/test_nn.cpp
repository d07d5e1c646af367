#include <gtest/gtest.h>

#include <cmath>

#include "readlab/nn.hpp"
#include "readlab/rng.hpp"

using namespace readlab;
using namespace readlab::nn;

TEST(Rng, Fnv1aKnownVectors) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, DerivedStreamsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(1, "gen"), derive_seed(1, "gen"));
  EXPECT_NE(derive_seed(1, "gen"), derive_seed(1, "reward"));
  EXPECT_NE(derive_seed(1, "gen"), derive_seed(2, "gen"));
}

TEST(Rng, StateRoundTrip) {
  Rng a = make_stream(5, "x");
  a.discard(17);
  Rng b;
  set_rng_state(b, rng_state(a));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
  EXPECT_THROW(set_rng_state(b, "not a state"), std::runtime_error);
}

TEST(Softmax, SumsToOneAndIsStable) {
  Vec z(4);
  z << 1000.0, 999.0, -5.0, 0.0;
  const Vec p = softmax(z);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(log_softmax(z)[0], std::log(p[0]), 1e-12);
  EXPECT_NEAR(logsumexp(z), 1000.0 + std::log(1.0 + std::exp(-1.0)), 1e-9);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  Param p("p", 1, 1);
  p.value(0, 0) = 2.0;
  p.grad(0, 0) = 0.5;
  AdamW opt({&p}, {.lr = 0.1, .weight_decay = 0.01});
  opt.step();
  // decay: 2 * (1 - 0.001) = 1.998; bias-corrected m = 0.5, sqrt(v) = 0.5
  const double expect = 2.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(p.value(0, 0), expect, 1e-12);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, ZeroGradientAndNoDecayLeavesParams) {
  Param p("p", 2, 3);
  p.value.setConstant(0.7);
  AdamW opt({&p}, {.lr = 0.1, .weight_decay = 0.0});
  opt.step();
  EXPECT_TRUE((p.value.array() == 0.7).all());
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  Param a("a", 1, 2), b("b", 2, 1);
  a.grad << 3.0, 0.0;
  b.grad << 0.0, 4.0;
  const ParamList ps{&a, &b};
  EXPECT_NEAR(clip_grad_norm(ps, 1.0), 5.0, 1e-12);
  EXPECT_NEAR(grad_norm(ps), 1.0, 1e-12);
  EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-12);
  EXPECT_NEAR(grad_norm(ps), 1.0, 1e-12);
}

TEST(DropoutMask, InvertedScaling) {
  Rng rng(3);
  const Vec m = dropout_mask(10000, 0.2, rng);
  for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_TRUE(m[i] == 0.0 || std::abs(m[i] - 1.25) < 1e-12);
  EXPECT_NEAR(m.mean(), 1.0, 0.03);
}

TEST(Init, GlorotRange) {
  Rng rng(1);
  Param p("w", 30, 20);
  init_glorot(p, rng);
  const double limit = std::sqrt(6.0 / 50.0);
  EXPECT_LE(p.value.cwiseAbs().maxCoeff(), limit);
  EXPECT_GT(p.value.cwiseAbs().maxCoeff(), 0.5 * limit);
}

namespace {

double mlp_objective(const Mlp& m, const Vec& x, const Vec& c) { return c.dot(m.forward(x)); }

}  // namespace

class MlpGradient : public ::testing::TestWithParam<Activation> {};

TEST_P(MlpGradient, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  Mlp m("m", {3, 4, 2}, GetParam(), Activation::Identity, 0.0, 0.2);
  for (Linear& l : m.layers()) {
    init_uniform(l.W, 0.8, rng);
    init_uniform(l.b, 0.3, rng);
  }
  Vec x(3), c(2);
  x << 0.3, -0.7, 1.1;
  c << 1.0, -2.0;
  ParamList ps;
  m.collect(ps);
  zero_grad(ps);
  const Vec dx = m.backward(m.forward_trace(x, nullptr), c);
  const double h = 1e-6;
  for (Param* p : ps) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      const double fp = mlp_objective(m, x, c);
      p->value.data()[i] = saved - h;
      const double fm = mlp_objective(m, x, c);
      p->value.data()[i] = saved;
      EXPECT_NEAR(p->grad.data()[i], (fp - fm) / (2 * h), 1e-7) << p->name;
    }
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    EXPECT_NEAR(dx[i], (mlp_objective(m, xp, c) - mlp_objective(m, xm, c)) / (2 * h), 1e-7);
  }
}

INSTANTIATE_TEST_SUITE_P(Activations, MlpGradient,
                         ::testing::Values(Activation::Tanh, Activation::LeakyRelu, Activation::Identity));

TEST(Mlp, DropoutTraceIsUsedInBackward) {
  Rng rng(2);
  Mlp m("m", {2, 8, 1}, Activation::Tanh, Activation::Identity, 0.5);
  for (Linear& l : m.layers()) init_uniform(l.W, 0.5, rng);
  Vec x(2);
  x << 1.0, -1.0;
  Rng drop(4);
  const Mlp::Trace tr = m.forward_trace(x, &drop);
  ASSERT_EQ(tr.masks.size(), 1u);
  ParamList ps;
  m.collect(ps);
  zero_grad(ps);
  Vec dy(1);
  dy << 1.0;
  m.backward(tr, dy);
  // Output-layer weights feeding dropped units get zero gradient.
  const Mat& g = m.layers()[1].W.grad;
  for (Eigen::Index j = 0; j < 8; ++j)
    if (tr.masks[0][j] == 0.0) EXPECT_EQ(g(0, j), 0.0);
  // Without an rng the trace is deterministic and equals forward().
  EXPECT_TRUE(m.forward_trace(x, nullptr).output.isApprox(m.forward(x)));
}

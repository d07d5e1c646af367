#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "readlab/gradcheck.hpp"
#include "readlab/reward.hpp"

using namespace readlab;
using namespace readlab::reward;
using generator::Trajectory;

namespace {

RewardConfig small() {
  RewardConfig c;
  c.state_dim = 3;
  c.vocab_size = 5;
  c.action_embed_dim = 2;
  c.hidden_dim = 4;
  c.hidden_layers = 2;
  c.dropout = 0.0;
  return c;
}

Trajectory make_traj(std::vector<int> tokens, bool finished, Rng& rng) {
  Trajectory tr;
  tr.tokens = std::move(tokens);
  tr.finished = finished;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t t = 0; t < tr.tokens.size(); ++t) {
    nn::Vec s(3);
    for (int i = 0; i < 3; ++i) s[i] = u(rng);
    tr.states.push_back(s);
    tr.step_log_probs.push_back(std::log(0.2));
  }
  return tr;
}

// Forward pass written out layer by layer, independent of RewardNet::input.
double manual_reward(RewardNet& net, const nn::Vec& s, int a, double p) {
  const auto& emb = net.action_embed().value;
  std::vector<double> x(s.data(), s.data() + s.size());
  for (Eigen::Index j = 0; j < emb.cols(); ++j) x.push_back(emb(a, j));
  x.push_back(p);
  const auto& layers = net.mlp().layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& W = layers[l].W.value;
    std::vector<double> y(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      double acc = layers[l].b.value(r, 0);
      for (Eigen::Index c = 0; c < W.cols(); ++c) acc += W(r, c) * x[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(r)] = l + 1 < layers.size() ? std::tanh(acc) : acc;
    }
    x = y;
  }
  return x[0];
}

}  // namespace

TEST(RewardNet, DReadIgnoresFakeProbability) {
  RewardNet net(small(), 3);
  Rng rng(1);
  const Trajectory tr = make_traj({1}, false, rng);
  EXPECT_EQ(net.step_reward(tr.states[0], 1, 0.3, RewardMode::DRead),
            net.step_reward(tr.states[0], 1, 0.9, RewardMode::DRead));
}

TEST(RewardNet, ReadDependsOnFakeProbability) {
  RewardNet net(small(), 3);
  ASSERT_NE(net.mlp().layers()[0].W.value.col(net.input_dim() - 1).norm(), 0.0);
  Rng rng(1);
  const Trajectory tr = make_traj({1}, false, rng);
  EXPECT_NE(net.step_reward(tr.states[0], 1, 0.0, RewardMode::Read),
            net.step_reward(tr.states[0], 1, 1.0, RewardMode::Read));
}

TEST(RewardNet, ZeroNetworkGivesZeroReward) {
  RewardNet net(small(), 3);
  for (nn::Param* p : net.params()) p->value.setZero();
  Rng rng(2);
  const Trajectory tr = make_traj({0, 4, 2}, false, rng);
  for (double p : {0.0, 0.5, 1.0}) {
    EXPECT_EQ(trajectory_reward(net, tr, p, RewardMode::Read).total, 0.0);
  }
}

TEST(RewardNet, RejectsBadInputs) {
  RewardNet net(small(), 3);
  nn::Vec s = nn::Vec::Zero(3);
  EXPECT_THROW(net.step_reward(nn::Vec::Zero(4), 0, 0.5, RewardMode::Read), std::invalid_argument);
  EXPECT_THROW(net.step_reward(s, 5, 0.5, RewardMode::Read), std::invalid_argument);
  EXPECT_THROW(net.step_reward(s, 0, 1.5, RewardMode::Read), std::invalid_argument);
}

TEST(TrajectoryReward, SingleStepEqualsStepReward) {
  RewardNet net(small(), 4);
  Rng rng(3);
  const Trajectory tr = make_traj({2}, false, rng);
  EXPECT_EQ(trajectory_reward(net, tr, 0.4, RewardMode::Read).total,
            net.step_reward(tr.states[0], 2, 0.4, RewardMode::Read));
}

TEST(TrajectoryReward, ThreeStepsMatchIndependentRecomputation) {
  RewardNet net(small(), 5);
  Rng rng(4);
  const Trajectory tr = make_traj({1, 3, 2}, false, rng);
  double expect = 0.0;
  for (std::size_t t = 0; t < 3; ++t) expect += manual_reward(net, tr.states[t], tr.tokens[t], 0.7);
  const TrajectoryReward r = trajectory_reward(net, tr, 0.7, RewardMode::Read);
  EXPECT_NEAR(r.total, expect, 1e-9);
  EXPECT_NEAR(std::accumulate(r.per_step.begin(), r.per_step.end(), 0.0), r.total, 1e-12);
}

TEST(TrajectoryReward, TerminalEosStepIsInactive) {
  RewardNet net(small(), 5);
  Rng rng(4);
  const Trajectory tr = make_traj({1, 3, 2}, true, rng);
  EXPECT_EQ(active_steps(tr), 2);
  const TrajectoryReward r = trajectory_reward(net, tr, 0.2, RewardMode::Read);
  ASSERT_EQ(r.per_step.size(), 3u);
  EXPECT_EQ(r.per_step[2], 0.0);
  EXPECT_NEAR(r.total, r.per_step[0] + r.per_step[1], 1e-15);
}

TEST(ImportanceWeights, NormalizedAndClamped) {
  const std::vector<double> rewards{1.0, 2.0, 0.0};
  const std::vector<double> logq{-1.0, -1.0, -1.0};
  const auto w = importance_weights(rewards, logq);
  const double z = std::exp(2.0) + std::exp(3.0) + std::exp(1.0);
  EXPECT_NEAR(w[0], std::exp(2.0) / z, 1e-12);
  EXPECT_NEAR(w[1], std::exp(3.0) / z, 1e-12);
  EXPECT_NEAR(w[0] + w[1] + w[2], 1.0, 1e-12);

  // Both log-weights exceed the clamp, so they tie.
  const auto c = importance_weights(std::vector<double>{100.0, 50.0}, std::vector<double>{0.0, 0.0});
  EXPECT_NEAR(c[0], 0.5, 1e-12);
  EXPECT_THROW(importance_weights(std::vector<double>{1.0}, std::vector<double>{}), std::invalid_argument);
}

TEST(Irl, GradientMatchesFiniteDifferences) {
  const gradcheck::Report r = gradcheck::check_reward();
  EXPECT_TRUE(r.passed) << r.worst_rel_error << " at " << r.worst_coordinate;
}

TEST(Irl, SeparatesRealFromGeneratedAfter200Updates) {
  RewardConfig cfg = small();
  RewardNet net(cfg, 9);
  Rng rng(11);
  std::vector<Trajectory> real, gen;
  std::vector<double> logq, pf_real, pf_gen;
  for (int i = 0; i < 16; ++i) {
    real.push_back(make_traj({1, 2, 1}, false, rng));
    gen.push_back(make_traj({3, 4, 3}, false, rng));
    logq.push_back(gen.back().log_prob());
    pf_real.push_back(0.2);
    pf_gen.push_back(0.8);
  }
  const IrlBatch batch{real, gen, logq, pf_real, pf_gen};
  nn::AdamW opt(net.params(), {.lr = 0.004});
  IrlDiagnostics d;
  for (int step = 0; step < 200; ++step) d = irl_update(net, opt, batch, RewardMode::Read, nullptr);
  double r = 0.0, g = 0.0;
  for (int i = 0; i < 16; ++i) {
    r += trajectory_reward(net, real[static_cast<std::size_t>(i)], 0.2, RewardMode::Read).total;
    g += trajectory_reward(net, gen[static_cast<std::size_t>(i)], 0.8, RewardMode::Read).total;
  }
  EXPECT_GT(r / 16 - g / 16, 0.0);
  EXPECT_GT(d.effective_sample_size, 0.0);
  EXPECT_LE(d.effective_sample_size, 16.0 + 1e-9);
}

TEST(Irl, RejectsEmptyOrMisalignedBatches) {
  RewardNet net(small(), 9);
  Rng rng(1);
  std::vector<Trajectory> real{make_traj({1}, false, rng)};
  std::vector<Trajectory> gen{make_traj({2}, false, rng), make_traj({3}, false, rng)};
  std::vector<double> logq{-1.0};
  std::vector<double> pr{0.1}, pg{0.5, 0.5};
  nn::AdamW opt(net.params(), {.lr = 0.004});
  EXPECT_THROW(irl_update(net, opt, IrlBatch{real, gen, logq, pr, pg}, RewardMode::Read, nullptr),
               std::invalid_argument);
  EXPECT_THROW(irl_update(net, opt, IrlBatch{{}, gen, logq, pr, pg}, RewardMode::Read, nullptr),
               std::invalid_argument);
}

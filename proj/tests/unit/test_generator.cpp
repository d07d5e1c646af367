#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "readlab/corpus.hpp"
#include "readlab/generator.hpp"
#include "readlab/gradcheck.hpp"

using namespace readlab;
using namespace readlab::generator;

namespace {

GeneratorConfig micro(int vocab, int eos = -1) {
  GeneratorConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 3;
  c.state_dim = 4;
  c.ff_layers = 1;
  c.ff_dim = 4;
  c.dropout = 0.0;
  c.bos_id = 0;
  c.eos_id = eos;
  return c;
}

std::vector<nn::Mat> values(Generator& g) {
  std::vector<nn::Mat> out;
  for (const nn::Param* p : g.params()) out.push_back(p->value);
  return out;
}

// Zero network whose logits equal the output bias.
Generator fixed_logits(const std::vector<double>& logits, int eos = -1) {
  Generator g(micro(static_cast<int>(logits.size()), eos), 1);
  for (nn::Param* p : g.params()) p->value.setZero();
  for (std::size_t j = 0; j < logits.size(); ++j)
    g.logit_layer().b.value(static_cast<Eigen::Index>(j), 0) = logits[j];
  return g;
}

}  // namespace

TEST(Generator, HandComputedLogProbWithFixedLogits) {
  Generator g = fixed_logits({0.5, -0.3});
  const double z = std::exp(0.5) + std::exp(-0.3);
  const double lp0 = 0.5 - std::log(z);
  const double lp1 = -0.3 - std::log(z);
  const std::vector<int> seq{0, 0, 1};
  EXPECT_NEAR(g.log_prob(seq), 2 * lp0 + lp1, 1e-12);
  const Trajectory tr = g.teacher_force(seq);
  ASSERT_EQ(tr.step_log_probs.size(), 3u);
  EXPECT_NEAR(tr.step_log_probs[2], lp1, 1e-12);
}

TEST(Generator, UniformPolicyLogProbIsLogOneOverV) {
  Generator g = fixed_logits({0.0, 0.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(g.log_prob(std::vector<int>{3}), std::log(1.0 / 5.0), 1e-12);
}

TEST(Generator, UniformPolicyFirstTokenHistogramWithinThreeSigma) {
  const int n = 100000, v = 5;
  Generator g = fixed_logits(std::vector<double>(v, 0.0));
  std::vector<int> counts(v, 0);
  for (const Trajectory& tr : g.sample(n, 1, 31ULL)) ++counts[static_cast<std::size_t>(tr.tokens[0])];
  const double p = 1.0 / v;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LE(std::abs(c - n * p), 3 * sigma);
}

TEST(Generator, NearZeroTemperatureIsGreedy) {
  GeneratorConfig c = micro(6, 3);
  c.init_scale = 1.0;
  Generator g(c, 12);
  Trajectory greedy;
  {
    // Greedy decode by argmax over one-step extensions.
    std::vector<int> prefix;
    for (int t = 0; t < 5; ++t) {
      int best = 0;
      double best_lp = -1e300;
      for (int v = 0; v < 6; ++v) {
        std::vector<int> seq = prefix;
        seq.push_back(v);
        const double lp = g.log_prob(seq);
        if (lp > best_lp) best_lp = lp, best = v;
      }
      prefix.push_back(best);
      if (best == 3) break;
    }
    greedy.tokens = prefix;
  }
  for (const Trajectory& tr : g.sample(50, 5, 77ULL, 1e-3)) EXPECT_EQ(tr.tokens, greedy.tokens);
}

TEST(Generator, StepDistributionsSumToOne) {
  Generator g(micro(7, 3), 5);
  const auto trajs = g.sample(20, 10, 9ULL);
  for (const Trajectory& tr : trajs) {
    for (double lp : tr.step_log_probs) EXPECT_LE(lp, 0.0);
  }
  // Sum over the next-token distribution at one prefix: enumerate every continuation.
  const std::vector<int> prefix{4, 5};
  double total = 0.0;
  for (int v = 0; v < 7; ++v) {
    std::vector<int> seq = prefix;
    seq.push_back(v);
    total += std::exp(g.log_prob(seq) - g.log_prob(prefix));
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(Generator, SamplingIsBitReproducible) {
  Generator g(micro(6, 3), 2);
  const auto a = g.sample(10, 8, 42ULL);
  const auto b = g.sample(10, 8, 42ULL);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].step_log_probs, b[i].step_log_probs);
  }
}

TEST(Generator, SampledLogProbsAgreeWithTeacherForcing) {
  Generator g(micro(6, 3), 2);
  for (const Trajectory& tr : g.sample(10, 8, 1ULL)) {
    EXPECT_NEAR(tr.log_prob(), g.log_prob(tr.tokens), 1e-10);
    const Trajectory tf = g.teacher_force(tr.tokens);
    for (std::size_t t = 0; t < tr.states.size(); ++t) EXPECT_TRUE(tr.states[t].isApprox(tf.states[t]));
    EXPECT_EQ(tr.finished, tf.finished);
  }
}

TEST(Generator, StopsAtEosAndRespectsMaxLen) {
  Generator g = fixed_logits({0.0, 0.0, 0.0, 5.0}, 3);
  for (const Trajectory& tr : g.sample(50, 6, 3ULL)) {
    EXPECT_LE(tr.length(), 6);
    if (tr.finished) EXPECT_EQ(tr.tokens.back(), 3);
    for (int t = 0; t + 1 < tr.length(); ++t) EXPECT_NE(tr.tokens[static_cast<std::size_t>(t)], 3);
  }
}

TEST(Generator, MaskedIdsAreNeverSampledAndRejectedOnScoring) {
  GeneratorConfig c = micro(6, 3);
  c.masked_ids = {0, 2};
  Generator g(c, 4);
  for (const Trajectory& tr : g.sample(100, 5, 8ULL)) {
    for (int t : tr.tokens) {
      EXPECT_NE(t, 0);
      EXPECT_NE(t, 2);
    }
  }
  EXPECT_THROW(g.log_prob(std::vector<int>{1, 2}), std::invalid_argument);
  EXPECT_THROW(g.log_prob(std::vector<int>{1, 6}), std::out_of_range);
  EXPECT_THROW(g.log_prob(std::vector<int>{}), std::invalid_argument);
}

TEST(Generator, TemperatureSharpensSampling) {
  Generator g = fixed_logits({1.0, 0.0, 0.0});
  auto count0 = [&](double temp) {
    int n = 0;
    for (const Trajectory& tr : g.sample(2000, 1, 5ULL, temp)) n += tr.tokens[0] == 0;
    return n;
  };
  EXPECT_GT(count0(0.25), count0(1.0));
  EXPECT_THROW(g.sample(1, 1, 5ULL, 0.0), std::invalid_argument);
}

TEST(Generator, LogProbGradientMatchesFiniteDifferences) {
  const gradcheck::Report r = gradcheck::check_generator();
  EXPECT_TRUE(r.passed) << r.worst_rel_error << " at " << r.worst_coordinate;
  EXPECT_GT(r.coordinates, 20);
}

TEST(PolicyGradient, ZeroRewardsNoEntropyLeaveParamsUnchanged) {
  Generator g(micro(5, 3), 3);
  const auto trajs = g.sample(8, 6, 2ULL);
  std::vector<std::vector<double>> rewards;
  for (const auto& tr : trajs) rewards.emplace_back(tr.tokens.size(), 0.0);
  const auto before = values(g);
  nn::AdamW opt(g.params(), {.lr = 0.01, .weight_decay = 0.0});
  BaselineState b;
  const auto diag = policy_gradient_step(g, opt, trajs, rewards, 0.0, b);
  EXPECT_EQ(diag.grad_norm, 0.0);
  const auto after = values(g);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i] == after[i]);
}

TEST(PolicyGradient, NanRewardFailsBeforeUpdate) {
  Generator g(micro(5, 3), 3);
  const auto trajs = g.sample(2, 4, 2ULL);
  std::vector<std::vector<double>> rewards;
  for (const auto& tr : trajs) rewards.emplace_back(tr.tokens.size(), 1.0);
  rewards[1][0] = std::nan("");
  const auto before = values(g);
  nn::AdamW opt(g.params(), {.lr = 0.01});
  BaselineState b;
  EXPECT_THROW(policy_gradient_step(g, opt, trajs, rewards, 0.01, b), std::invalid_argument);
  const auto after = values(g);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i] == after[i]);
  EXPECT_EQ(b.value, 0.0);
}

TEST(PolicyGradient, RejectsMisalignedRewardsAndNegativeEntropyWeight) {
  Generator g(micro(5, 3), 3);
  const auto trajs = g.sample(2, 4, 2ULL);
  std::vector<std::vector<double>> rewards{{1.0}};
  EXPECT_THROW(accumulate_policy_gradient(g, trajs, rewards, 0.0, 0.0), std::invalid_argument);
  rewards.clear();
  for (const auto& tr : trajs) rewards.emplace_back(tr.tokens.size() + 1, 0.0);
  EXPECT_THROW(accumulate_policy_gradient(g, trajs, rewards, 0.0, 0.0), std::invalid_argument);
  rewards.clear();
  for (const auto& tr : trajs) rewards.emplace_back(tr.tokens.size(), 0.0);
  EXPECT_THROW(accumulate_policy_gradient(g, trajs, rewards, -0.1, 0.0), std::invalid_argument);
}

TEST(PolicyGradient, BaselineIsExponentialMovingAverageOfMeanReturn) {
  Generator g = fixed_logits({0.0, 0.0});
  Trajectory tr = g.teacher_force(std::vector<int>{0});
  std::vector<Trajectory> trajs{tr, tr};
  std::vector<std::vector<double>> rewards{{2.0}, {4.0}};
  nn::AdamW opt(g.params(), {.lr = 1e-3});
  BaselineState b{.value = 1.0, .decay = 0.9};
  const auto d = policy_gradient_step(g, opt, trajs, rewards, 0.0, b);
  EXPECT_NEAR(d.mean_return, 3.0, 1e-12);
  EXPECT_NEAR(b.value, 0.9 * 1.0 + 0.1 * 3.0, 1e-12);
}

TEST(PolicyGradient, TwoArmBanditLearnsRewardedToken) {
  Generator g(micro(2), 11);
  g.logit_layer().W.value.setZero();
  g.logit_layer().b.value.setZero();
  nn::AdamW opt(g.params(), {.lr = 0.005});
  BaselineState b;
  Rng rng(5);
  auto prob_a = [&] { return std::exp(g.log_prob(std::vector<int>{0})); };
  const double start = prob_a();
  double prev = start;
  for (int step = 0; step < 200; ++step) {
    const auto trajs = g.sample(32, 1, rng);
    std::vector<std::vector<double>> rewards;
    for (const auto& tr : trajs) rewards.push_back({tr.tokens[0] == 0 ? 1.0 : 0.0});
    policy_gradient_step(g, opt, trajs, rewards, 0.0, b);
    const double now = prob_a();
    EXPECT_GT(now, prev) << "step " << step;
    prev = now;
  }
  EXPECT_NEAR(start, 0.5, 1e-12);
  EXPECT_GT(prob_a(), 0.95);
}

TEST(PolicyGradient, EntropyOnlyObjectiveRaisesEntropyFromPeakedStart) {
  Generator g = fixed_logits({4.0, 0.0, 0.0});
  auto entropy = [&] {
    double h = 0.0;
    for (int v = 0; v < 3; ++v) {
      const double p = std::exp(g.log_prob(std::vector<int>{v}));
      h -= p * std::log(p);
    }
    return h;
  };
  nn::AdamW opt(g.params(), {.lr = 0.005, .weight_decay = 0.0});
  BaselineState b;
  Rng rng(8);
  std::vector<double> curve{entropy()};
  for (int step = 0; step < 100; ++step) {
    const auto trajs = g.sample(2000, 1, rng);
    std::vector<std::vector<double>> zero(trajs.size(), std::vector<double>{0.0});
    policy_gradient_step(g, opt, trajs, zero, 1.0, b);
    curve.push_back(entropy());
  }
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i], curve[i - 1]) << "update " << i;
  EXPECT_GT(curve.back(), curve.front() + 0.1);
}

TEST(Mle, ZeroEpochsIsNoOp) {
  Generator g(micro(5, 3), 3);
  const auto before = values(g);
  Rng rng(1);
  const std::vector<std::vector<int>> corpus{{1, 2, 3}};
  EXPECT_TRUE(mle_pretrain(g, corpus, {.epochs = 0}, rng).empty());
  const auto after = values(g);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i] == after[i]);
}

TEST(Mle, OverfitsSingleSentence) {
  GeneratorConfig c = micro(8, 3);
  c.embed_dim = c.state_dim = c.ff_dim = 16;
  c.dropout = 0.1;
  Generator g(c, 3);
  const std::vector<std::vector<int>> corpus(64, std::vector<int>{4, 5, 6, 7, 3});
  Rng rng(2);
  const auto curve = mle_pretrain(g, corpus, {.epochs = 50, .batch_size = 8}, rng);
  ASSERT_EQ(curve.size(), 50u);
  EXPECT_LT(curve.back(), 0.1);
}

TEST(Mle, EmptyCorpusThrows) {
  Generator g(micro(5, 3), 3);
  Rng rng(1);
  std::vector<std::vector<int>> empty;
  EXPECT_THROW(mle_pretrain(g, empty, {}, rng), std::invalid_argument);
}

namespace {

struct SynthCorpus {
  corpus::Vocabulary vocab;
  std::vector<std::vector<int>> seqs;
};

SynthCorpus synth_corpus() {
  auto ex = corpus::synth_grammar(3, 1000, corpus::topic_grammar());
  SynthCorpus s{corpus::build_vocab(ex, 1), {}};
  corpus::encode_all(ex, s.vocab);
  for (const auto& e : ex) s.seqs.push_back(e.tokens);
  return s;
}

GeneratorConfig defaults(int vocab) {
  GeneratorConfig c;
  c.vocab_size = vocab;
  c.masked_ids = {corpus::kPad, corpus::kBos};
  return c;
}

}  // namespace

TEST(Mle, NllMostlyDecreasesAndSamplesStayOnCorpusBigrams) {
  const SynthCorpus s = synth_corpus();
  Generator g(defaults(s.vocab.size()), 4);
  Rng rng(6);
  const auto curve = mle_pretrain(g, s.seqs, MleOptions{}, rng);
  int ok = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) ok += curve[i] <= curve[i - 1];
  EXPECT_GE(ok, static_cast<int>(std::ceil(0.9 * static_cast<double>(curve.size() - 1))));

  std::set<std::pair<int, int>> support;
  for (const auto& seq : s.seqs) {
    int prev = corpus::kBos;
    for (int t : seq) {
      support.insert({prev, t});
      prev = t;
    }
  }
  long in = 0, total = 0;
  for (const Trajectory& tr : g.sample(200, 64, 17ULL)) {
    int prev = corpus::kBos;
    for (int t : tr.tokens) {
      in += support.count({prev, t});
      ++total;
      prev = t;
    }
  }
  EXPECT_GE(static_cast<double>(in) / static_cast<double>(total), 0.8);
}

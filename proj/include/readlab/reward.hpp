#pragma once

// Reward approximator: r_phi(s_t, a_t, p_fake) as a feed-forward network over
// [state; action embedding; fake-probability], trajectory sums, and a
// maximum-entropy IRL update against generator samples.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "readlab/generator.hpp"
#include "readlab/nn.hpp"

namespace readlab::reward {

/// Read feeds the classifier's fake-probability; DRead zeroes that input
/// (the weight column stays).
enum class RewardMode { Read, DRead };

std::string_view to_string(RewardMode m);

struct RewardConfig {
  int state_dim = 128;
  int vocab_size = 0;
  int action_embed_dim = 128;
  int hidden_dim = 128;
  int hidden_layers = 3;
  double dropout = 0.2;
};

class RewardNet {
 public:
  RewardNet() = default;
  RewardNet(RewardConfig cfg, std::uint64_t seed);

  const RewardConfig& config() const { return cfg_; }
  int input_dim() const { return cfg_.state_dim + cfg_.action_embed_dim + 1; }
  nn::ParamList params();
  nn::Mlp& mlp() { return mlp_; }
  nn::Param& action_embed() { return embed_; }

  /// Evaluation-mode reward (no dropout).
  double step_reward(const nn::Vec& state, int action, double p_fake, RewardMode mode) const;
  /// Adds weight * d r / d phi to the parameter grads. rng enables dropout.
  void accumulate_step_grad(const nn::Vec& state, int action, double p_fake, RewardMode mode,
                            double weight, Rng* dropout_rng);

 private:
  nn::Vec input(const nn::Vec& state, int action, double p_fake, RewardMode mode) const;

  RewardConfig cfg_;
  nn::Param embed_;  // vocab x action_embed_dim, separate from the generator's table
  nn::Mlp mlp_;
};

/// Steps that count toward the reward: every step except a terminal EOS.
int active_steps(const generator::Trajectory& tr);

struct TrajectoryReward {
  double total = 0.0;
  std::vector<double> per_step;  // one entry per trajectory step; 0 at the EOS step
};

/// R_phi(tau) = sum over active steps of r_phi(s_t, a_t, p_fake), with a single
/// trajectory-level p_fake fed to every step.
TrajectoryReward trajectory_reward(const RewardNet& net, const generator::Trajectory& tr,
                                   double p_fake, RewardMode mode);

struct IrlDiagnostics {
  double mean_real_reward = 0.0;
  double mean_gen_reward = 0.0;
  double effective_sample_size = 0.0;
  std::vector<double> weights;  // normalized importance weights
};

struct IrlBatch {
  std::span<const generator::Trajectory> real;
  std::span<const generator::Trajectory> gen;
  std::span<const double> gen_log_probs;
  std::span<const double> p_fake_real;
  std::span<const double> p_fake_gen;
};

/// Self-normalized importance weights w_i ~ exp(clamp(R(tau_i) - log q(tau_i), -20, 20)).
std::vector<double> importance_weights(std::span<const double> gen_rewards,
                                       std::span<const double> gen_log_probs);

/// Accumulates the gradient of the negated objective
///   L(phi) = mean_real R(tau) - log Z,  grad log Z ~= sum_i w_i grad R(tau_i)
/// into the reward parameters' grads.
IrlDiagnostics accumulate_irl_gradient(RewardNet& net, const IrlBatch& batch, RewardMode mode,
                                       Rng* dropout_rng);

/// One ascent step on L(phi).
IrlDiagnostics irl_update(RewardNet& net, nn::AdamW& opt, const IrlBatch& batch,
                          RewardMode mode, Rng* dropout_rng);

/// mean_real R - log sum_i exp(R(tau_i) - log q(tau_i)). Its gradient equals the
/// IRL gradient whenever the log-weight clamp is inactive.
double irl_objective(const RewardNet& net, const IrlBatch& batch, RewardMode mode);

}  // namespace readlab::reward

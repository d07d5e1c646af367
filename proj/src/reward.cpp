#include "readlab/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace readlab::reward {

std::string_view to_string(RewardMode m) { return m == RewardMode::Read ? "READ" : "D_READ"; }

RewardNet::RewardNet(RewardConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.vocab_size < 1) throw std::invalid_argument("reward vocab_size must be >= 1");
  embed_ = nn::Param("reward.action_embed", cfg_.vocab_size, cfg_.action_embed_dim);
  std::vector<int> dims{input_dim()};
  for (int l = 0; l < cfg_.hidden_layers; ++l) dims.push_back(cfg_.hidden_dim);
  dims.push_back(1);
  mlp_ = nn::Mlp("reward.mlp", dims, nn::Activation::Tanh, nn::Activation::Identity, cfg_.dropout);

  Rng rng(seed);
  nn::init_uniform(embed_, 0.1, rng);
  for (nn::Linear& l : mlp_.layers()) {
    nn::init_glorot(l.W, rng);
    l.b.value.setZero();
  }
}

nn::ParamList RewardNet::params() {
  nn::ParamList out{&embed_};
  mlp_.collect(out);
  return out;
}

nn::Vec RewardNet::input(const nn::Vec& state, int action, double p_fake, RewardMode mode) const {
  if (state.size() != cfg_.state_dim)
    throw std::invalid_argument("reward: state has dimension " + std::to_string(state.size()) +
                                ", expected " + std::to_string(cfg_.state_dim));
  if (action < 0 || action >= cfg_.vocab_size) throw std::invalid_argument("reward: action out of range");
  if (!(p_fake >= 0.0 && p_fake <= 1.0)) throw std::invalid_argument("reward: p_fake outside [0, 1]");
  nn::Vec x(input_dim());
  x.head(cfg_.state_dim) = state;
  x.segment(cfg_.state_dim, cfg_.action_embed_dim) = embed_.value.row(action).transpose();
  x[input_dim() - 1] = mode == RewardMode::Read ? p_fake : 0.0;
  return x;
}

double RewardNet::step_reward(const nn::Vec& state, int action, double p_fake,
                              RewardMode mode) const {
  return mlp_.forward(input(state, action, p_fake, mode))[0];
}

void RewardNet::accumulate_step_grad(const nn::Vec& state, int action, double p_fake,
                                     RewardMode mode, double weight, Rng* dropout_rng) {
  const nn::Mlp::Trace tr = mlp_.forward_trace(input(state, action, p_fake, mode), dropout_rng);
  const nn::Vec dx = mlp_.backward(tr, nn::Vec::Constant(1, weight));
  embed_.grad.row(action) += dx.segment(cfg_.state_dim, cfg_.action_embed_dim).transpose();
}

int active_steps(const generator::Trajectory& tr) {
  return tr.length() - (tr.finished ? 1 : 0);
}

TrajectoryReward trajectory_reward(const RewardNet& net, const generator::Trajectory& tr,
                                   double p_fake, RewardMode mode) {
  TrajectoryReward out;
  out.per_step.assign(static_cast<std::size_t>(tr.length()), 0.0);
  const int active = active_steps(tr);
  for (int t = 0; t < active; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    out.per_step[ut] = net.step_reward(tr.states[ut], tr.tokens[ut], p_fake, mode);
    out.total += out.per_step[ut];
  }
  return out;
}

std::vector<double> importance_weights(std::span<const double> gen_rewards,
                                       std::span<const double> gen_log_probs) {
  if (gen_rewards.size() != gen_log_probs.size() || gen_rewards.empty())
    throw std::invalid_argument("importance weights need aligned, non-empty inputs");
  std::vector<double> w(gen_rewards.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double lw = std::clamp(gen_rewards[i] - gen_log_probs[i], -20.0, 20.0);
    w[i] = std::exp(lw);
    sum += w[i];
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) throw std::runtime_error("degenerate importance weights");
  for (double& x : w) x /= sum;
  return w;
}

namespace {

void check_batch(const IrlBatch& b) {
  if (b.real.empty() || b.gen.empty())
    throw std::invalid_argument("irl_update needs at least one real and one generated trajectory");
  if (b.gen_log_probs.size() != b.gen.size() || b.p_fake_gen.size() != b.gen.size() ||
      b.p_fake_real.size() != b.real.size())
    throw std::invalid_argument("irl_update: misaligned batch");
}

void accumulate_trajectory(RewardNet& net, const generator::Trajectory& tr, double p_fake,
                           RewardMode mode, double weight, Rng* rng) {
  const int active = active_steps(tr);
  for (int t = 0; t < active; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    net.accumulate_step_grad(tr.states[ut], tr.tokens[ut], p_fake, mode, weight, rng);
  }
}

}  // namespace

IrlDiagnostics accumulate_irl_gradient(RewardNet& net, const IrlBatch& batch, RewardMode mode,
                                       Rng* dropout_rng) {
  check_batch(batch);
  IrlDiagnostics diag;
  std::vector<double> gen_rewards(batch.gen.size());
  for (std::size_t i = 0; i < batch.gen.size(); ++i) {
    gen_rewards[i] = trajectory_reward(net, batch.gen[i], batch.p_fake_gen[i], mode).total;
    diag.mean_gen_reward += gen_rewards[i] / static_cast<double>(batch.gen.size());
  }
  for (std::size_t i = 0; i < batch.real.size(); ++i) {
    diag.mean_real_reward += trajectory_reward(net, batch.real[i], batch.p_fake_real[i], mode).total /
                             static_cast<double>(batch.real.size());
  }
  diag.weights = importance_weights(gen_rewards, batch.gen_log_probs);
  double sq = 0.0;
  for (double w : diag.weights) sq += w * w;
  diag.effective_sample_size = 1.0 / sq;

  // Gradient of -L: -mean_real grad R + sum_i w_i grad R_i.
  const double real_w = -1.0 / static_cast<double>(batch.real.size());
  for (std::size_t i = 0; i < batch.real.size(); ++i)
    accumulate_trajectory(net, batch.real[i], batch.p_fake_real[i], mode, real_w, dropout_rng);
  for (std::size_t i = 0; i < batch.gen.size(); ++i)
    accumulate_trajectory(net, batch.gen[i], batch.p_fake_gen[i], mode, diag.weights[i], dropout_rng);
  return diag;
}

IrlDiagnostics irl_update(RewardNet& net, nn::AdamW& opt, const IrlBatch& batch,
                          RewardMode mode, Rng* dropout_rng) {
  const nn::ParamList params = net.params();
  nn::zero_grad(params);
  IrlDiagnostics diag = accumulate_irl_gradient(net, batch, mode, dropout_rng);
  opt.step();
  if (!nn::all_finite(params)) throw std::runtime_error("reward parameters became non-finite");
  return diag;
}

double irl_objective(const RewardNet& net, const IrlBatch& batch, RewardMode mode) {
  check_batch(batch);
  double real = 0.0;
  for (std::size_t i = 0; i < batch.real.size(); ++i)
    real += trajectory_reward(net, batch.real[i], batch.p_fake_real[i], mode).total;
  real /= static_cast<double>(batch.real.size());
  nn::Vec logw(static_cast<Eigen::Index>(batch.gen.size()));
  for (std::size_t i = 0; i < batch.gen.size(); ++i) {
    logw[static_cast<Eigen::Index>(i)] =
        trajectory_reward(net, batch.gen[i], batch.p_fake_gen[i], mode).total - batch.gen_log_probs[i];
  }
  return real - nn::logsumexp(logw);
}

}  // namespace readlab::reward

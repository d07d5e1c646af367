#pragma once

// Autoregressive token policy: embedding -> single LSTM layer -> feed-forward
// stack -> vocabulary logits. Samples trajectories, scores sequences under
// teacher forcing, and trains by MLE or entropy-regularized policy gradient.

#include <cstdint>
#include <span>
#include <vector>

#include "readlab/corpus.hpp"
#include "readlab/nn.hpp"

namespace readlab::generator {

struct GeneratorConfig {
  int vocab_size = 0;
  int embed_dim = 128;
  int state_dim = 128;
  int ff_layers = 4;  // hidden feed-forward layers before the logit layer
  int ff_dim = 128;
  double dropout = 0.1;
  int bos_id = corpus::kBos;
  int eos_id = corpus::kEos;  // < 0 disables early stopping
  std::vector<int> masked_ids;  // ids that are never emitted (e.g. PAD, BOS)
  double init_scale = 0.08;
};

/// A generated (or teacher-forced) sequence. states[t] is the recurrent state
/// from which tokens[t] was chosen, so the action at step t is tokens[t].
struct Trajectory {
  std::vector<int> tokens;
  std::vector<nn::Vec> states;
  std::vector<double> step_log_probs;
  bool finished = false;

  int length() const { return static_cast<int>(tokens.size()); }
  std::span<const int> actions() const { return tokens; }
  double log_prob() const;
};

class Generator {
 public:
  Generator() = default;
  Generator(GeneratorConfig cfg, std::uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }
  nn::ParamList params();
  /// The final (vocabulary-sized) layer.
  nn::Linear& logit_layer() { return ff_.layers().back(); }

  /// Categorical sampling from softmax(logits / temperature), starting from BOS
  /// and the zero state. Dropout is off. step_log_probs are recorded under the
  /// untempered policy so they agree with log_prob().
  std::vector<Trajectory> sample(int n, int max_len, Rng& rng, double temperature = 1.0) const;
  std::vector<Trajectory> sample(int n, int max_len, std::uint64_t seed,
                                 double temperature = 1.0) const;

  /// Teacher-forced pass (dropout off); fills states and step log-probs.
  Trajectory teacher_force(std::span<const int> tokens) const;
  /// Sum of teacher-forced step log-probabilities.
  double log_prob(std::span<const int> tokens) const;

  struct PassStats {
    double weighted_logprob = 0.0;  // sum_t w_t log q(x_t)
    double nll = 0.0;               // -sum_t log q(x_t)
    double entropy = 0.0;           // sum_t H(q(. | s_t))
    std::vector<double> step_log_probs;
  };
  /// Accumulates the gradient of -sum_t w_t log q(x_t | x_<t) into the
  /// parameter grads. `weights` may be computed lazily from the step log-probs
  /// via `weight_fn` (needed when the weights depend on the policy itself).
  PassStats accumulate_grad(std::span<const int> tokens, std::span<const double> weights,
                            Rng* dropout_rng);
  template <typename WeightFn>
  PassStats accumulate_grad_with(std::span<const int> tokens, WeightFn&& weight_fn,
                                 Rng* dropout_rng);

 private:
  struct StepCache;
  void validate_tokens(std::span<const int> tokens) const;
  std::vector<StepCache> forward(std::span<const int> tokens, Rng* dropout_rng) const;
  void backward(std::span<const int> tokens, const std::vector<StepCache>& caches,
                std::span<const double> weights);
  nn::Vec masked(const nn::Vec& logits) const;

  GeneratorConfig cfg_;
  nn::Param embed_;   // vocab x embed
  nn::Linear gates_;  // (embed + state) -> 4 * state, gate order i, f, g, o
  nn::Mlp ff_;
  nn::Vec mask_;  // 0 or -inf per vocabulary entry
};

struct BaselineState {
  double value = 0.0;
  double decay = 0.9;
};

struct PolicyGradientDiagnostics {
  double mean_return = 0.0;
  double mean_entropy = 0.0;
  double grad_norm = 0.0;
};

/// Accumulates the surrogate gradient whose negation is the REINFORCE estimator
///   g = (1/N) sum_n sum_t grad log q(a_t|s_t) * A_{n,t},
///   A_{n,t} = sum_{t' >= t} (r_{n,t'} - lambda * log q(a_t'|s_t')) - b.
/// Does not touch the baseline or the parameters.
PolicyGradientDiagnostics accumulate_policy_gradient(
    Generator& gen, std::span<const Trajectory> trajectories,
    std::span<const std::vector<double>> per_step_rewards, double entropy_weight,
    double baseline);

/// One ascent step on the estimator above: gradient clipping at `clip_norm`,
/// an optimizer step, then b <- decay * b + (1 - decay) * mean return.
PolicyGradientDiagnostics policy_gradient_step(
    Generator& gen, nn::AdamW& opt, std::span<const Trajectory> trajectories,
    std::span<const std::vector<double>> per_step_rewards, double entropy_weight,
    BaselineState& baseline, double clip_norm = 5.0);

struct MleOptions {
  int epochs = 5;
  double lr = 0.005;
  double weight_decay = 0.01;
  int batch_size = 32;
  double clip_norm = 5.0;
};

/// Teacher-forced maximum likelihood. Returns the mean per-token NLL on the
/// corpus (evaluation mode) after each epoch.
std::vector<double> mle_pretrain(Generator& gen, std::span<const std::vector<int>> corpus,
                                 const MleOptions& opts, Rng& rng);

/// Mean per-token NLL in evaluation mode.
double mean_token_nll(const Generator& gen, std::span<const std::vector<int>> corpus);

// --- implementation of the templated accumulate -------------------------------

struct Generator::StepCache {
  int input = 0;
  nn::Vec z;  // [embedding; h_prev]
  nn::Vec i, f, g, o;
  nn::Vec c_prev, c, tanh_c, h;
  nn::Mlp::Trace trace;
  nn::Vec probs;
  double log_prob = 0.0;
  double entropy = 0.0;
};

template <typename WeightFn>
Generator::PassStats Generator::accumulate_grad_with(std::span<const int> tokens,
                                                     WeightFn&& weight_fn, Rng* dropout_rng) {
  validate_tokens(tokens);
  const std::vector<StepCache> caches = forward(tokens, dropout_rng);
  PassStats st;
  st.step_log_probs.reserve(caches.size());
  for (const StepCache& c : caches) {
    st.step_log_probs.push_back(c.log_prob);
    st.nll -= c.log_prob;
    st.entropy += c.entropy;
  }
  const std::vector<double> weights = weight_fn(std::span<const double>(st.step_log_probs));
  for (std::size_t t = 0; t < caches.size(); ++t) st.weighted_logprob += weights[t] * caches[t].log_prob;
  backward(tokens, caches, weights);
  return st;
}

}  // namespace readlab::generator

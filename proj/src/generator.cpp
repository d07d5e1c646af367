#include "readlab/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace readlab::generator {

namespace {

nn::Vec sigmoid(const nn::Vec& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

double step_entropy(const nn::Vec& probs) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    if (probs[j] > 0.0) h -= probs[j] * std::log(probs[j]);
  }
  return h;
}

int categorical(const nn::Vec& probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    acc += probs[j];
    last_positive = static_cast<int>(j);
    if (r < acc) return static_cast<int>(j);
  }
  return last_positive;
}

}  // namespace

double Trajectory::log_prob() const {
  return std::accumulate(step_log_probs.begin(), step_log_probs.end(), 0.0);
}

Generator::Generator(GeneratorConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.vocab_size < 2) throw std::invalid_argument("generator vocab_size must be >= 2");
  if (cfg_.ff_layers < 0) throw std::invalid_argument("ff_layers must be >= 0");
  embed_ = nn::Param("gen.embed", cfg_.vocab_size, cfg_.embed_dim);
  gates_ = nn::Linear("gen.lstm", cfg_.embed_dim + cfg_.state_dim, 4 * cfg_.state_dim);
  std::vector<int> dims{cfg_.state_dim};
  for (int l = 0; l < cfg_.ff_layers; ++l) dims.push_back(cfg_.ff_dim);
  dims.push_back(cfg_.vocab_size);
  ff_ = nn::Mlp("gen.ff", dims, nn::Activation::Tanh, nn::Activation::Identity, cfg_.dropout);

  mask_ = nn::Vec::Zero(cfg_.vocab_size);
  for (int id : cfg_.masked_ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw std::invalid_argument("masked id out of range");
    mask_[id] = -std::numeric_limits<double>::infinity();
  }

  Rng rng(seed);
  for (nn::Param* p : params()) nn::init_uniform(*p, cfg_.init_scale, rng);
}

nn::ParamList Generator::params() {
  nn::ParamList out{&embed_};
  gates_.collect(out);
  ff_.collect(out);
  return out;
}

nn::Vec Generator::masked(const nn::Vec& logits) const {
  return cfg_.masked_ids.empty() ? logits : nn::Vec(logits + mask_);
}

void Generator::validate_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("token sequence must be non-empty");
  for (int t : tokens) {
    if (t < 0 || t >= cfg_.vocab_size)
      throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
    if (std::isinf(mask_[t])) throw std::invalid_argument("token id " + std::to_string(t) + " is masked");
  }
}

std::vector<Generator::StepCache> Generator::forward(std::span<const int> tokens,
                                                     Rng* dropout_rng) const {
  const int H = cfg_.state_dim;
  const int E = cfg_.embed_dim;
  std::vector<StepCache> caches(tokens.size());
  nn::Vec h = nn::Vec::Zero(H);
  nn::Vec c = nn::Vec::Zero(H);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    StepCache& sc = caches[t];
    sc.input = t == 0 ? cfg_.bos_id : tokens[t - 1];
    sc.z.resize(E + H);
    sc.z.head(E) = embed_.value.row(sc.input).transpose();
    sc.z.tail(H) = h;
    const nn::Vec a = gates_.forward(sc.z);
    sc.i = sigmoid(a.segment(0, H));
    sc.f = sigmoid(a.segment(H, H));
    sc.g = a.segment(2 * H, H).array().tanh().matrix();
    sc.o = sigmoid(a.segment(3 * H, H));
    sc.c_prev = c;
    sc.c = sc.f.cwiseProduct(c) + sc.i.cwiseProduct(sc.g);
    sc.tanh_c = sc.c.array().tanh().matrix();
    sc.h = sc.o.cwiseProduct(sc.tanh_c);
    sc.trace = ff_.forward_trace(sc.h, dropout_rng);
    const nn::Vec logits = masked(sc.trace.output);
    const nn::Vec logp = nn::log_softmax(logits);
    sc.probs = logp.array().exp().matrix();
    sc.log_prob = logp[tokens[t]];
    sc.entropy = step_entropy(sc.probs);
    h = sc.h;
    c = sc.c;
  }
  return caches;
}

void Generator::backward(std::span<const int> tokens, const std::vector<StepCache>& caches,
                         std::span<const double> weights) {
  const int H = cfg_.state_dim;
  const int E = cfg_.embed_dim;
  nn::Vec dh_next = nn::Vec::Zero(H);
  nn::Vec dc_next = nn::Vec::Zero(H);
  for (std::size_t t = caches.size(); t-- > 0;) {
    const StepCache& sc = caches[t];
    nn::Vec dh = dh_next;
    if (weights[t] != 0.0) {
      nn::Vec dlogits = sc.probs;
      dlogits[tokens[t]] -= 1.0;
      dlogits *= weights[t];
      dh += ff_.backward(sc.trace, dlogits);
    }
    const nn::Vec dc = dc_next + dh.cwiseProduct(sc.o).cwiseProduct(
                                     (1.0 - sc.tanh_c.array().square()).matrix());
    nn::Vec da(4 * H);
    da.segment(0, H) = dc.cwiseProduct(sc.g).cwiseProduct(sc.i.cwiseProduct((1.0 - sc.i.array()).matrix()));
    da.segment(H, H) = dc.cwiseProduct(sc.c_prev).cwiseProduct(sc.f.cwiseProduct((1.0 - sc.f.array()).matrix()));
    da.segment(2 * H, H) = dc.cwiseProduct(sc.i).cwiseProduct((1.0 - sc.g.array().square()).matrix());
    da.segment(3 * H, H) = dh.cwiseProduct(sc.tanh_c).cwiseProduct(sc.o.cwiseProduct((1.0 - sc.o.array()).matrix()));
    const nn::Vec dz = gates_.backward(sc.z, da);
    embed_.grad.row(sc.input) += dz.head(E).transpose();
    dh_next = dz.tail(H);
    dc_next = dc.cwiseProduct(sc.f);
  }
}

Generator::PassStats Generator::accumulate_grad(std::span<const int> tokens,
                                                std::span<const double> weights,
                                                Rng* dropout_rng) {
  if (weights.size() != tokens.size()) throw std::invalid_argument("weights/tokens length mismatch");
  return accumulate_grad_with(
      tokens,
      [&](std::span<const double>) { return std::vector<double>(weights.begin(), weights.end()); },
      dropout_rng);
}

Trajectory Generator::teacher_force(std::span<const int> tokens) const {
  validate_tokens(tokens);
  const std::vector<StepCache> caches = forward(tokens, nullptr);
  Trajectory tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  for (const StepCache& c : caches) {
    tr.states.push_back(c.trace.inputs.front());
    tr.step_log_probs.push_back(c.log_prob);
  }
  tr.finished = cfg_.eos_id >= 0 && tokens.back() == cfg_.eos_id;
  return tr;
}

double Generator::log_prob(std::span<const int> tokens) const {
  return teacher_force(tokens).log_prob();
}

std::vector<Trajectory> Generator::sample(int n, int max_len, Rng& rng, double temperature) const {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const int H = cfg_.state_dim;
  const int E = cfg_.embed_dim;
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  for (Trajectory& tr : out) {
    nn::Vec h = nn::Vec::Zero(H);
    nn::Vec c = nn::Vec::Zero(H);
    int input = cfg_.bos_id;
    nn::Vec z(E + H);
    for (int t = 0; t < max_len; ++t) {
      z.head(E) = embed_.value.row(input).transpose();
      z.tail(H) = h;
      const nn::Vec a = gates_.forward(z);
      const nn::Vec i = sigmoid(a.segment(0, H));
      const nn::Vec f = sigmoid(a.segment(H, H));
      const nn::Vec g = a.segment(2 * H, H).array().tanh().matrix();
      const nn::Vec o = sigmoid(a.segment(3 * H, H));
      c = f.cwiseProduct(c) + i.cwiseProduct(g);
      h = o.cwiseProduct(c.array().tanh().matrix());
      const nn::Vec logits = masked(ff_.forward(h));
      const nn::Vec logp = nn::log_softmax(logits);
      const nn::Vec probs = temperature == 1.0 ? nn::Vec(logp.array().exp().matrix())
                                               : nn::softmax(logits / temperature);
      const int tok = categorical(probs, rng);
      tr.tokens.push_back(tok);
      tr.states.push_back(h);
      tr.step_log_probs.push_back(logp[tok]);
      input = tok;
      if (tok == cfg_.eos_id) {
        tr.finished = true;
        break;
      }
    }
  }
  return out;
}

std::vector<Trajectory> Generator::sample(int n, int max_len, std::uint64_t seed,
                                          double temperature) const {
  Rng rng(seed);
  return sample(n, max_len, rng, temperature);
}

PolicyGradientDiagnostics accumulate_policy_gradient(
    Generator& gen, std::span<const Trajectory> trajectories,
    std::span<const std::vector<double>> per_step_rewards, double entropy_weight,
    double baseline) {
  if (trajectories.size() != per_step_rewards.size())
    throw std::invalid_argument("one reward vector per trajectory required");
  if (entropy_weight < 0.0) throw std::invalid_argument("entropy_weight must be >= 0");
  if (trajectories.empty()) throw std::invalid_argument("no trajectories");
  for (std::size_t n = 0; n < trajectories.size(); ++n) {
    if (static_cast<int>(per_step_rewards[n].size()) != trajectories[n].length())
      throw std::invalid_argument("per-step rewards not aligned with trajectory steps");
    for (double r : per_step_rewards[n]) {
      if (std::isnan(r)) throw std::invalid_argument("NaN in per-step rewards");
    }
  }

  const double inv_n = 1.0 / static_cast<double>(trajectories.size());
  PolicyGradientDiagnostics diag;
  long steps = 0;
  for (std::size_t n = 0; n < trajectories.size(); ++n) {
    const std::vector<double>& rewards = per_step_rewards[n];
    double total_return = 0.0;
    auto weight_fn = [&](std::span<const double> logq) {
      std::vector<double> w(logq.size());
      double to_go = 0.0;
      for (std::size_t t = logq.size(); t-- > 0;) {
        to_go += rewards[t] - entropy_weight * logq[t];
        // Surrogate loss is -(1/N) sum_t A_t log q, so the weight is A_t / N.
        w[t] = (to_go - baseline) * inv_n;
      }
      total_return = to_go;
      return w;
    };
    const Generator::PassStats st =
        gen.accumulate_grad_with(trajectories[n].tokens, weight_fn, nullptr);
    diag.mean_return += total_return * inv_n;
    diag.mean_entropy += st.entropy;
    steps += trajectories[n].length();
  }
  diag.mean_entropy /= static_cast<double>(std::max<long>(steps, 1));
  diag.grad_norm = nn::grad_norm(gen.params());
  return diag;
}

PolicyGradientDiagnostics policy_gradient_step(
    Generator& gen, nn::AdamW& opt, std::span<const Trajectory> trajectories,
    std::span<const std::vector<double>> per_step_rewards, double entropy_weight,
    BaselineState& baseline, double clip_norm) {
  const nn::ParamList params = gen.params();
  nn::zero_grad(params);
  PolicyGradientDiagnostics diag = accumulate_policy_gradient(
      gen, trajectories, per_step_rewards, entropy_weight, baseline.value);
  nn::clip_grad_norm(params, clip_norm);
  opt.step();
  if (!nn::all_finite(params)) throw std::runtime_error("generator parameters became non-finite");
  baseline.value = baseline.decay * baseline.value + (1.0 - baseline.decay) * diag.mean_return;
  return diag;
}

double mean_token_nll(const Generator& gen, std::span<const std::vector<int>> corpus) {
  double nll = 0.0;
  long tokens = 0;
  for (const auto& seq : corpus) {
    nll -= gen.log_prob(seq);
    tokens += static_cast<long>(seq.size());
  }
  return tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
}

std::vector<double> mle_pretrain(Generator& gen, std::span<const std::vector<int>> corpus,
                                 const MleOptions& opts, Rng& rng) {
  std::vector<double> curve;
  if (opts.epochs <= 0) return curve;
  if (corpus.empty()) throw std::invalid_argument("mle_pretrain needs a non-empty corpus");
  const nn::ParamList params = gen.params();
  nn::AdamW opt(params, {.lr = opts.lr, .weight_decay = opts.weight_decay});
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(std::max(opts.batch_size, 1));
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      long n_tok = 0;
      for (std::size_t j = start; j < end; ++j) n_tok += static_cast<long>(corpus[order[j]].size());
      nn::zero_grad(params);
      for (std::size_t j = start; j < end; ++j) {
        const auto& seq = corpus[order[j]];
        const std::vector<double> w(seq.size(), 1.0 / static_cast<double>(n_tok));
        gen.accumulate_grad(seq, w, &rng);
      }
      nn::clip_grad_norm(params, opts.clip_norm);
      opt.step();
    }
    if (!nn::all_finite(params)) throw std::runtime_error("generator parameters became non-finite");
    curve.push_back(mean_token_nll(gen, corpus));
  }
  return curve;
}

}  // namespace readlab::generator

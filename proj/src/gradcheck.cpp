#include "readlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "readlab/classifier.hpp"
#include "readlab/generator.hpp"
#include "readlab/reward.hpp"

namespace readlab::gradcheck {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
  return std::abs(analytic - numeric) / denom;
}

Report check(const std::string& component, const nn::ParamList& params,
             const std::function<double()>& objective, const std::function<void()>& analytic,
             const Options& opts) {
  nn::zero_grad(params);
  analytic();
  if (opts.corrupt) opts.corrupt(params);
  std::vector<nn::Mat> grads;
  for (const nn::Param* p : params) grads.push_back(p->grad);

  Report r;
  r.component = component;
  for (std::size_t k = 0; k < params.size(); ++k) {
    nn::Param& p = *params[k];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + opts.step;
      const double fp = objective();
      x = saved - opts.step;
      const double fm = objective();
      x = saved;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double err = relative_error(grads[k].data()[i], numeric);
      ++r.coordinates;
      if (err > r.worst_rel_error || r.worst_coordinate.empty()) {
        r.worst_rel_error = err;
        r.worst_coordinate = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  r.passed = r.worst_rel_error < opts.tolerance;
  return r;
}

namespace {

void scale_grads(const nn::ParamList& params, double s) {
  for (nn::Param* p : params) p->grad *= s;
}

std::vector<double> uniform_vector(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> out(n);
  for (double& v : out) v = u(rng);
  return out;
}

}  // namespace

Report check_generator(const Options& opts) {
  generator::GeneratorConfig cfg;
  cfg.vocab_size = 6;
  cfg.embed_dim = 3;
  cfg.state_dim = 3;
  cfg.ff_layers = 1;
  cfg.ff_dim = 3;
  cfg.dropout = 0.0;
  cfg.masked_ids = {0};
  cfg.init_scale = 0.5;
  generator::Generator gen(cfg, derive_seed(opts.seed, "gradcheck.generator"));
  Rng rng = make_stream(opts.seed, "gradcheck.generator.data");

  const std::vector<std::vector<int>> seqs = {{4, 5, 1, 3}, {5, 3}, {1, 4, 4, 5, 2}};
  std::vector<std::vector<double>> weights;
  for (const auto& s : seqs) weights.push_back(uniform_vector(s.size(), -1.0, 1.0, rng));

  auto objective = [&]() {
    double f = 0.0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const generator::Trajectory tr = gen.teacher_force(seqs[i]);
      for (std::size_t t = 0; t < tr.step_log_probs.size(); ++t) f += weights[i][t] * tr.step_log_probs[t];
    }
    return f;
  };
  const nn::ParamList params = gen.params();
  auto analytic = [&]() {
    for (std::size_t i = 0; i < seqs.size(); ++i) gen.accumulate_grad(seqs[i], weights[i], nullptr);
    scale_grads(params, -1.0);  // accumulate_grad yields the gradient of the negated objective
  };
  return check("generator", params, objective, analytic, opts);
}

Report check_reward(const Options& opts) {
  reward::RewardConfig cfg;
  cfg.state_dim = 2;
  cfg.vocab_size = 4;
  cfg.action_embed_dim = 2;
  cfg.hidden_dim = 3;
  cfg.hidden_layers = 2;
  cfg.dropout = 0.0;
  reward::RewardNet net(cfg, derive_seed(opts.seed, "gradcheck.reward"));
  Rng rng = make_stream(opts.seed, "gradcheck.reward.data");
  std::normal_distribution<double> n01(0.0, 1.0);

  auto make_traj = [&](std::vector<int> tokens, bool finished) {
    generator::Trajectory tr;
    tr.tokens = std::move(tokens);
    tr.finished = finished;
    for (std::size_t t = 0; t < tr.tokens.size(); ++t) {
      nn::Vec s(cfg.state_dim);
      for (Eigen::Index j = 0; j < s.size(); ++j) s[j] = n01(rng);
      tr.states.push_back(s);
      tr.step_log_probs.push_back(-1.0);
    }
    return tr;
  };
  const std::vector<generator::Trajectory> real = {make_traj({1, 2, 3}, true), make_traj({2, 2}, false)};
  const std::vector<generator::Trajectory> gen = {make_traj({0, 1, 3}, true), make_traj({3}, true),
                                                  make_traj({1, 0, 2}, false)};
  const std::vector<double> gen_logq = {-2.1, -0.7, -3.3};
  const std::vector<double> p_real = uniform_vector(real.size(), 0.0, 1.0, rng);
  const std::vector<double> p_gen = uniform_vector(gen.size(), 0.0, 1.0, rng);
  const reward::IrlBatch batch{real, gen, gen_logq, p_real, p_gen};

  const nn::ParamList params = net.params();
  Report worst;
  worst.component = "reward";
  for (reward::RewardMode mode : {reward::RewardMode::Read, reward::RewardMode::DRead}) {
    auto objective = [&]() { return reward::irl_objective(net, batch, mode); };
    auto analytic = [&]() {
      reward::accumulate_irl_gradient(net, batch, mode, nullptr);
      scale_grads(params, -1.0);  // accumulated as the gradient of -L
    };
    Report r = check("reward", params, objective, analytic, opts);
    if (r.worst_rel_error >= worst.worst_rel_error) {
      worst.worst_rel_error = r.worst_rel_error;
      worst.worst_coordinate = std::string(reward::to_string(mode)) + ":" + r.worst_coordinate;
    }
    worst.coordinates += r.coordinates;
  }
  worst.passed = worst.worst_rel_error < opts.tolerance;
  return worst;
}

Report check_classifier(const Options& opts) {
  classifier::Model model;
  model.encoder.emplace(classifier::EncoderConfig{6, 3, 3, 3, corpus::kPad},
                        derive_seed(opts.seed, "gradcheck.encoder"));
  model.head = classifier::Classifier({3, 3, 2, 0.2}, derive_seed(opts.seed, "gradcheck.classifier"));

  using classifier::ModelInput;
  classifier::ClassifierBatch batch;
  batch.labeled = {ModelInput::from_tokens({4, 5, 3}), ModelInput::from_tokens({2, 1, 0})};
  batch.labels = {0, 1};
  batch.real = {ModelInput::from_tokens({5, 5, 1}), ModelInput::from_tokens({3, 4})};
  batch.fake = {ModelInput::from_tokens({1, 2}), ModelInput::from_tokens({4, 4, 4, 5})};
  const classifier::LossWeights w{1.0, 0.7, 1.3};

  const nn::ParamList params = model.params();
  auto objective = [&]() { return classifier::classifier_losses(model, batch, w).total; };
  auto analytic = [&]() { classifier::accumulate_classifier_gradient(model, batch, w); };
  return check("classifier", params, objective, analytic, opts);
}

std::vector<Report> run(const std::string& component, const Options& opts) {
  std::vector<Report> out;
  const bool all = component == "all";
  if (!all && component != "generator" && component != "reward" && component != "classifier")
    throw std::invalid_argument("unknown gradcheck component '" + component +
                                "'; valid: generator, reward, classifier, all");
  if (all || component == "generator") out.push_back(check_generator(opts));
  if (all || component == "reward") out.push_back(check_reward(opts));
  if (all || component == "classifier") out.push_back(check_classifier(opts));
  return out;
}

}  // namespace readlab::gradcheck

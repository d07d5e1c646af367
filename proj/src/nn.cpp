#include "readlab/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace readlab::nn {

void zero_grad(const ParamList& params) {
  for (Param* p : params) p->grad.setZero();
}

double grad_norm(const ParamList& params) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Param* p : params) p->grad *= scale;
  }
  return norm;
}

bool all_finite(const ParamList& params) {
  for (const Param* p : params) {
    if (!p->value.allFinite()) return false;
  }
  return true;
}

Eigen::Index num_params(const ParamList& params) {
  Eigen::Index n = 0;
  for (const Param* p : params) n += p->size();
  return n;
}

void init_uniform(Param& p, double scale, Rng& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
}

void init_glorot(Param& p, Rng& rng) {
  const double scale = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  init_uniform(p, scale, rng);
}

AdamW::AdamW(ParamList params, Options opts) : params_(std::move(params)), opts_(opts) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    if (opts_.weight_decay != 0.0) p.value *= (1.0 - opts_.lr * opts_.weight_decay);
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * p.grad;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= opts_.lr * (m_[i].array() / bc1) /
                       ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

Vec activate(const Vec& z, Activation a, double slope) {
  switch (a) {
    case Activation::Tanh:
      return z.array().tanh().matrix();
    case Activation::LeakyRelu:
      return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    case Activation::Identity:
      return z;
  }
  return z;
}

Vec activate_backward(const Vec& z, const Vec& dy, Activation a, double slope) {
  switch (a) {
    case Activation::Tanh: {
      const Eigen::ArrayXd t = z.array().tanh();
      return (dy.array() * (1.0 - t * t)).matrix();
    }
    case Activation::LeakyRelu:
      return dy.binaryExpr(z, [slope](double g, double v) { return v > 0.0 ? g : slope * g; });
    case Activation::Identity:
      return dy;
  }
  return dy;
}

Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

double logsumexp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vec log_softmax(const Vec& logits) {
  return (logits.array() - logsumexp(logits)).matrix();
}

Vec dropout_mask(Eigen::Index n, double rate, Rng& rng) {
  Vec mask(n);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < n; ++i) mask[i] = keep(rng) ? scale : 0.0;
  return mask;
}

Mlp::Mlp(const std::string& name, const std::vector<int>& dims, Activation hidden,
         Activation output, double dropout, double slope)
    : hidden_(hidden), output_(output), dropout_(dropout), slope_(slope) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least input and output dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), dims[i], dims[i + 1]);
  }
}

Vec Mlp::forward(const Vec& x) const {
  Vec h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool last = i + 1 == layers_.size();
    h = activate(layers_[i].forward(h), last ? output_ : hidden_, slope_);
  }
  return h;
}

Mlp::Trace Mlp::forward_trace(const Vec& x, Rng* rng) const {
  Trace tr;
  tr.inputs.reserve(layers_.size());
  tr.pre.reserve(layers_.size());
  Vec h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool last = i + 1 == layers_.size();
    tr.inputs.push_back(h);
    Vec z = layers_[i].forward(h);
    h = activate(z, last ? output_ : hidden_, slope_);
    tr.pre.push_back(std::move(z));
    if (!last && rng != nullptr && dropout_ > 0.0) {
      Vec mask = dropout_mask(h.size(), dropout_, *rng);
      h = h.cwiseProduct(mask);
      tr.masks.push_back(std::move(mask));
    }
  }
  tr.output = h;
  return tr;
}

Vec Mlp::backward(const Trace& trace, const Vec& dy) {
  Vec g = dy;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const bool last = k + 1 == layers_.size();
    if (!last && !trace.masks.empty()) g = g.cwiseProduct(trace.masks[k]);
    g = activate_backward(trace.pre[k], g, last ? output_ : hidden_, slope_);
    g = layers_[k].backward(trace.inputs[k], g);
  }
  return g;
}

void Mlp::collect(ParamList& out) {
  for (Linear& l : layers_) l.collect(out);
}

}  // namespace readlab::nn

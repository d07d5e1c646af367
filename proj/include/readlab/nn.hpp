#pragma once

// Small dense building blocks shared by the generator, reward net, encoder and
// classifier. Everything is double precision so finite-difference checks are
// meaningful at step 1e-4.

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "readlab/rng.hpp"

namespace readlab::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// A named trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
};

using ParamList = std::vector<Param*>;

void zero_grad(const ParamList& params);
double grad_norm(const ParamList& params);
/// Rescales gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(const ParamList& params, double max_norm);
bool all_finite(const ParamList& params);
Eigen::Index num_params(const ParamList& params);
void init_uniform(Param& p, double scale, Rng& rng);
/// Glorot-uniform for a (fan_out x fan_in) weight.
void init_glorot(Param& p, Rng& rng);

/// Decoupled weight decay Adam. State is stored per parameter slot in the order
/// of the ParamList given at construction.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() = default;
  AdamW(ParamList params, Options opts);

  void step();
  const Options& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  long steps() const { return t_; }

  // Checkpoint access.
  std::vector<Mat>& first_moments() { return m_; }
  std::vector<Mat>& second_moments() { return v_; }
  const std::vector<Mat>& first_moments() const { return m_; }
  const std::vector<Mat>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  Options opts_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  long t_ = 0;
};

/// Dense affine map y = W x + b.
struct Linear {
  Param W;
  Param b;

  Linear() = default;
  Linear(const std::string& name, int in, int out)
      : W(name + ".W", out, in), b(name + ".b", out, 1) {}

  int in_dim() const { return static_cast<int>(W.value.cols()); }
  int out_dim() const { return static_cast<int>(W.value.rows()); }

  Vec forward(const Vec& x) const { return W.value * x + b.value.col(0); }
  /// Accumulates parameter gradients and returns dL/dx.
  Vec backward(const Vec& x, const Vec& dy) {
    W.grad.noalias() += dy * x.transpose();
    b.grad.col(0) += dy;
    return W.value.transpose() * dy;
  }
  void collect(ParamList& out) { out.push_back(&W); out.push_back(&b); }
};

enum class Activation { Tanh, LeakyRelu, Identity };

Vec activate(const Vec& z, Activation a, double slope = 0.2);
/// Derivative of the activation evaluated at pre-activation z, times dy.
Vec activate_backward(const Vec& z, const Vec& dy, Activation a, double slope = 0.2);

Vec softmax(const Vec& logits);
Vec log_softmax(const Vec& logits);
double logsumexp(const Vec& v);

/// Inverted-dropout mask (entries 0 or 1/(1-rate)).
Vec dropout_mask(Eigen::Index n, double rate, Rng& rng);

/// A stack of Linear layers with an activation after each hidden layer and an
/// optional activation on the output layer. Keeps the per-example caches needed
/// for backprop in a Trace.
class Mlp {
 public:
  struct Trace {
    std::vector<Vec> inputs;   // input to each layer (post-dropout)
    std::vector<Vec> pre;      // pre-activations
    std::vector<Vec> masks;    // dropout masks (empty when disabled)
    Vec output;
  };

  Mlp() = default;
  /// dims = {in, h1, ..., out}
  Mlp(const std::string& name, const std::vector<int>& dims, Activation hidden,
      Activation output, double dropout = 0.0, double slope = 0.2);

  Vec forward(const Vec& x) const;
  /// Training-mode forward; rng == nullptr disables dropout.
  Trace forward_trace(const Vec& x, Rng* rng) const;
  /// Accumulates parameter gradients; returns dL/dx.
  Vec backward(const Trace& trace, const Vec& dy);

  void collect(ParamList& out);
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  int in_dim() const { return layers_.front().in_dim(); }
  int out_dim() const { return layers_.back().out_dim(); }
  double dropout() const { return dropout_; }

 private:
  std::vector<Linear> layers_;
  Activation hidden_ = Activation::Tanh;
  Activation output_ = Activation::Identity;
  double dropout_ = 0.0;
  double slope_ = 0.2;
};

}  // namespace readlab::nn

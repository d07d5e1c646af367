#pragma once

// Text encoder M (mean-pooled embeddings -> two feed-forward layers -> d) and
// the (k+1)-way head C whose last class is "fake", with the labeled, real and
// fake losses used to train them.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "readlab/corpus.hpp"
#include "readlab/nn.hpp"

namespace readlab::classifier {

inline constexpr double kLogEps = 1e-12;

using FeatureVector = nn::Vec;

struct EncoderConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int hidden_dim = 64;
  int output_dim = 64;  // d
  int pad_id = corpus::kPad;
};

class Encoder {
 public:
  struct Trace {
    std::vector<int> ids;  // non-PAD tokens that were pooled
    nn::Vec pooled;
    nn::Mlp::Trace mlp;
  };

  Encoder() = default;
  Encoder(EncoderConfig cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  int output_dim() const { return cfg_.output_dim; }
  nn::ParamList params();
  nn::Linear& output_layer() { return mlp_.layers().back(); }

  /// Throws when the sequence is empty or all PAD.
  FeatureVector encode(std::span<const int> tokens) const;
  Trace forward_trace(std::span<const int> tokens) const;
  void backward(const Trace& trace, const nn::Vec& dh);

 private:
  EncoderConfig cfg_;
  nn::Param embed_;
  nn::Mlp mlp_;
};

/// Probability vector of length k + 1; index k is the fake class.
struct ClassProbs {
  nn::Vec probs;
  int k = 0;

  double p_fake() const { return probs[k]; }
  /// argmax over the first k entries, ties to the lowest index.
  int predicted_label() const;
};

struct ClassifierConfig {
  int input_dim = 64;
  int hidden_dim = 64;
  int num_classes = 2;  // k
  double leaky_slope = 0.2;
};

class Classifier {
 public:
  Classifier() = default;
  Classifier(ClassifierConfig cfg, std::uint64_t seed);

  const ClassifierConfig& config() const { return cfg_; }
  int k() const { return cfg_.num_classes; }
  nn::ParamList params();
  nn::Linear& output_layer() { return mlp_.layers().back(); }

  nn::Vec logits(const FeatureVector& h) const;
  ClassProbs classify(const FeatureVector& h) const;
  nn::Mlp::Trace forward_trace(const FeatureVector& h) const;
  /// Returns dL/dh.
  nn::Vec backward(const nn::Mlp::Trace& trace, const nn::Vec& dlogits);

 private:
  void check_dim(const FeatureVector& h) const;

  ClassifierConfig cfg_;
  nn::Mlp mlp_;
};

/// -log(p_y / sum_{j<k} p_j), epsilon-clamped.
double loss_labeled(const ClassProbs& p, int y);
/// -log(1 - p_fake), epsilon-clamped (1 - p_fake computed as sum_{j<k} p_j).
double loss_unlabeled_real(const ClassProbs& p);
/// -log(p_fake), epsilon-clamped.
double loss_fake(const ClassProbs& p);

// Gradients of the losses above with respect to the k+1 logits.
nn::Vec loss_labeled_grad(const ClassProbs& p, int y);
nn::Vec loss_unlabeled_real_grad(const ClassProbs& p);
nn::Vec loss_fake_grad(const ClassProbs& p);

/// Either a token sequence (run through the encoder) or a precomputed feature
/// vector (bypasses the encoder; used for feature-file inputs and synthetic
/// features).
struct ModelInput {
  std::vector<int> tokens;
  std::optional<FeatureVector> features;

  static ModelInput from_tokens(std::vector<int> t) { return {std::move(t), std::nullopt}; }
  static ModelInput from_features(FeatureVector f) { return {{}, std::move(f)}; }
};

/// Encoder (absent when features come from a file) plus the k+1 head.
struct Model {
  std::optional<Encoder> encoder;
  Classifier head;

  nn::ParamList params();
  FeatureVector features(const ModelInput& x) const;
  ClassProbs predict(const ModelInput& x) const;
};

struct ClassifierBatch {
  std::vector<ModelInput> labeled;
  std::vector<int> labels;
  std::vector<ModelInput> real;  // drawn from L and U
  std::vector<ModelInput> fake;  // generated
};

struct LossWeights {
  double labeled = 1.0;
  double unlabeled = 1.0;
  double fake = 1.0;
};

struct LossBreakdown {
  double labeled = 0.0;
  double unlabeled = 0.0;
  double fake = 0.0;
  double total = 0.0;
};

/// Thrown when a loss turns NaN; carries the loss breakdown at the time.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Batch-mean losses; empty parts contribute 0.
LossBreakdown classifier_losses(const Model& model, const ClassifierBatch& batch,
                                const LossWeights& w = {});
/// Accumulates d(total)/d(params) for encoder and head.
LossBreakdown accumulate_classifier_gradient(Model& model, const ClassifierBatch& batch,
                                             const LossWeights& w = {});
/// One descent step on w_l L_l + w_u L_u + w_f L_f.
LossBreakdown classifier_step(Model& model, nn::AdamW& opt, const ClassifierBatch& batch,
                              const LossWeights& w = {});

/// Precomputed feature rows `id<TAB>f_1,...,f_d`.
struct FeatureTable {
  int dim = 0;
  std::unordered_map<std::string, FeatureVector> rows;

  const FeatureVector& at(const std::string& id) const;
};
FeatureTable load_feature_file(const std::filesystem::path& path);

}  // namespace readlab::classifier

#pragma once

// The adversarial training loop for the four variants:
//   READ        classifier (L_l + L_u + L_f) -> reward (IRL, p_fake channel live)
//               -> generator (policy gradient)
//   D_READ      same, with the reward's p_fake channel zeroed
//   GAN_FEATURE classifier (L_l + L_u + L_f) -> feature generator step
//   BASELINE    classifier (L_l only)

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "readlab/classifier.hpp"
#include "readlab/config.hpp"
#include "readlab/corpus.hpp"
#include "readlab/generator.hpp"
#include "readlab/reward.hpp"

namespace readlab::trainer {

/// Noise -> leaky-ReLU hidden layer -> d-dimensional synthetic feature.
class FeatureGenerator {
 public:
  FeatureGenerator(int noise_dim, int hidden_dim, int output_dim, std::uint64_t seed);

  int noise_dim() const { return noise_dim_; }
  nn::ParamList params();
  nn::Vec sample_noise(Rng& rng) const;
  nn::Vec forward(const nn::Vec& z) const { return mlp_.forward(z); }
  nn::Mlp::Trace forward_trace(const nn::Vec& z) const { return mlp_.forward_trace(z, nullptr); }
  void backward(const nn::Mlp::Trace& tr, const nn::Vec& dy) { mlp_.backward(tr, dy); }

 private:
  int noise_dim_;
  nn::Mlp mlp_;
};

/// Split, vocabulary and label map for one run.
struct PreparedData {
  corpus::DatasetSplit split;
  corpus::Vocabulary vocab;
  corpus::LabelMap labels;
  std::vector<std::pair<std::string, std::string>> checksums;  // (source, fnv1a64 hex)
  std::optional<classifier::FeatureTable> features;
};

PreparedData prepare_dataset(const TrainConfig& cfg);

/// The model input for an example: its tokens, or its row in the feature file.
classifier::ModelInput model_input(const PreparedData& data, const corpus::Example& ex, bool test);

struct RunState {
  TrainConfig config;
  std::unique_ptr<generator::Generator> gen;
  std::unique_ptr<reward::RewardNet> reward;
  std::unique_ptr<classifier::Model> model;
  std::unique_ptr<FeatureGenerator> feature_gen;
  std::unique_ptr<nn::AdamW> opt_gen;
  std::unique_ptr<nn::AdamW> opt_reward;
  std::unique_ptr<nn::AdamW> opt_model;
  std::unique_ptr<nn::AdamW> opt_feature_gen;
  generator::BaselineState baseline;
  Rng rng_gen;
  Rng rng_reward;
  Rng rng_clf;
  Rng rng_batch;
  Rng rng_noise;
  Rng rng_pretrain;
  long iteration = 0;
  bool pretrained = false;
};

/// Builds every component the variant needs; initial weights depend only on the
/// master seed and the component, never on the variant.
RunState make_run_state(const TrainConfig& cfg, const PreparedData& data);

struct IterationMetrics {
  long iteration = 0;
  std::optional<double> loss_l, loss_u, loss_f;
  std::optional<double> mean_reward_real, mean_reward_gen, entropy;
  std::optional<double> test_accuracy;
  // Not streamed; exposed for tests.
  std::vector<double> p_fake_gen;
  std::vector<std::vector<int>> generated;
};

nlohmann::json metrics_record(const IterationMetrics& m, const TrainConfig& cfg);

/// One outer iteration (the U' batch is always fresh).
IterationMetrics train_iteration(RunState& state, const PreparedData& data);

/// MLE-pretrains the generator on L u U once (no-op for variants without one).
std::vector<double> pretrain_generator(RunState& state, const PreparedData& data);

double test_accuracy(const RunState& state, const PreparedData& data);

void save_state(const RunState& state, const std::filesystem::path& dir);
RunState load_state(const TrainConfig& cfg, const PreparedData& data,
                    const std::filesystem::path& dir);

struct RunOptions {
  std::optional<std::filesystem::path> outdir;  // metrics.jsonl and ckpt-<iter>/ go here
  std::optional<long> stop_after;               // simulated interruption (checkpoint, then return)
  std::optional<std::filesystem::path> resume_from;
  bool write_final_checkpoint = true;
};

struct RunResult {
  RunState state;
  std::vector<nlohmann::json> metrics;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  bool completed = false;
  std::optional<std::filesystem::path> final_checkpoint;
};

RunResult run(const TrainConfig& cfg, const PreparedData& data, const RunOptions& opts = {});

}  // namespace readlab::trainer

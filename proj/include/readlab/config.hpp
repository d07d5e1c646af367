#pragma once

// Run configuration. Serialized as a flat JSON object; unknown keys are errors.

#include <cstdint>
#include <string>
#include <stdexcept>
#include <string_view>

#include <json.hpp>

namespace readlab {

enum class Variant { Read, DRead, GanFeature, Baseline };

std::string_view to_string(Variant v);
/// Accepts READ, D_READ, GAN_FEATURE, BASELINE (also D-READ / GAN-FEATURE).
Variant parse_variant(std::string_view s);
inline constexpr std::string_view kVariantNames = "READ, D_READ, GAN_FEATURE, BASELINE";

inline bool uses_text_generator(Variant v) { return v == Variant::Read || v == Variant::DRead; }

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Variant variant = Variant::Read;
  std::uint64_t seed = 1;
  double label_fraction = 0.02;
  int outer_iterations = 2000;
  int batch_size = 32;
  int eval_every = 50;
  int checkpoint_every = 0;  // 0: final checkpoint only

  // Optimizer (AdamW, decoupled weight decay).
  double lr_G = 0.005;
  double lr_R = 0.004;
  double lr_MC = 5e-5;
  double lr_feature_gen = 5e-5;
  double weight_decay = 0.01;
  double grad_clip = 5.0;

  // Generator.
  int max_len = 64;
  double entropy_weight = 0.01;
  double temperature = 1.0;
  int pretrain_epochs = 5;
  double pretrain_lr = 0.005;
  int gen_embed_dim = 128;
  int gen_state_dim = 128;
  int gen_ff_layers = 4;
  int gen_ff_dim = 128;
  double gen_dropout = 0.1;
  double baseline_decay = 0.9;

  // Reward approximator.
  int reward_embed_dim = 128;
  int reward_hidden_dim = 128;
  int reward_hidden_layers = 3;
  double reward_dropout = 0.2;
  bool standardize_rewards = true;

  // Encoder and classifier.
  int d = 64;
  int enc_embed_dim = 64;
  int enc_hidden_dim = 64;
  int clf_hidden_dim = 0;  // 0: equal to d
  double leaky_slope = 0.2;
  double loss_weight_l = 1.0;
  double loss_weight_u = 1.0;
  double loss_weight_f = 1.0;

  // Feature generator (GAN_FEATURE).
  int noise_dim = 100;
  int feature_gen_hidden_dim = 0;  // 0: equal to d

  // Data.
  std::string data_source = "synth";  // synth | files
  std::string train_path;
  std::string test_path;
  std::string data_format = "tsv";  // tsv | trec
  std::string label_field = "coarse";
  std::string encoding = "auto";
  int min_freq = 1;
  std::string synth_grammar = "topic";  // topic | disjoint
  int synth_train = 1000;
  int synth_test = 500;
  std::uint64_t synth_seed = 7;
  std::string feature_file;  // rows keyed train:<i> / test:<i>

  int classifier_hidden() const { return clf_hidden_dim > 0 ? clf_hidden_dim : d; }
  int feature_gen_hidden() const { return feature_gen_hidden_dim > 0 ? feature_gen_hidden_dim : d; }

  /// Range checks; throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Overlays the keys present in `j` onto `base`. Unknown keys throw ConfigError.
TrainConfig merge_json(TrainConfig base, const nlohmann::json& j);
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::string& path);

}  // namespace readlab

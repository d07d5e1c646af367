#include "readlab/config.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace readlab {

using nlohmann::json;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Read: return "READ";
    case Variant::DRead: return "D_READ";
    case Variant::GanFeature: return "GAN_FEATURE";
    case Variant::Baseline: return "BASELINE";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  if (s == "READ") return Variant::Read;
  if (s == "D_READ" || s == "D-READ") return Variant::DRead;
  if (s == "GAN_FEATURE" || s == "GAN-FEATURE") return Variant::GanFeature;
  if (s == "BASELINE") return Variant::Baseline;
  throw ConfigError("unknown variant '" + std::string(s) + "'; valid: " + std::string(kVariantNames));
}

namespace {

// Visits every serialized field as (name, reference).
template <typename Config, typename Fn>
void visit_fields(Config& c, Fn&& f) {
  f("seed", c.seed);
  f("label_fraction", c.label_fraction);
  f("outer_iterations", c.outer_iterations);
  f("batch_size", c.batch_size);
  f("eval_every", c.eval_every);
  f("checkpoint_every", c.checkpoint_every);
  f("lr_G", c.lr_G);
  f("lr_R", c.lr_R);
  f("lr_MC", c.lr_MC);
  f("lr_feature_gen", c.lr_feature_gen);
  f("weight_decay", c.weight_decay);
  f("grad_clip", c.grad_clip);
  f("max_len", c.max_len);
  f("entropy_weight", c.entropy_weight);
  f("temperature", c.temperature);
  f("pretrain_epochs", c.pretrain_epochs);
  f("pretrain_lr", c.pretrain_lr);
  f("gen_embed_dim", c.gen_embed_dim);
  f("gen_state_dim", c.gen_state_dim);
  f("gen_ff_layers", c.gen_ff_layers);
  f("gen_ff_dim", c.gen_ff_dim);
  f("gen_dropout", c.gen_dropout);
  f("baseline_decay", c.baseline_decay);
  f("reward_embed_dim", c.reward_embed_dim);
  f("reward_hidden_dim", c.reward_hidden_dim);
  f("reward_hidden_layers", c.reward_hidden_layers);
  f("reward_dropout", c.reward_dropout);
  f("standardize_rewards", c.standardize_rewards);
  f("d", c.d);
  f("enc_embed_dim", c.enc_embed_dim);
  f("enc_hidden_dim", c.enc_hidden_dim);
  f("clf_hidden_dim", c.clf_hidden_dim);
  f("leaky_slope", c.leaky_slope);
  f("loss_weight_l", c.loss_weight_l);
  f("loss_weight_u", c.loss_weight_u);
  f("loss_weight_f", c.loss_weight_f);
  f("noise_dim", c.noise_dim);
  f("feature_gen_hidden_dim", c.feature_gen_hidden_dim);
  f("data_source", c.data_source);
  f("train_path", c.train_path);
  f("test_path", c.test_path);
  f("data_format", c.data_format);
  f("label_field", c.label_field);
  f("encoding", c.encoding);
  f("min_freq", c.min_freq);
  f("synth_grammar", c.synth_grammar);
  f("synth_train", c.synth_train);
  f("synth_test", c.synth_test);
  f("synth_seed", c.synth_seed);
  f("feature_file", c.feature_file);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

}  // namespace

void TrainConfig::validate() const {
  require(label_fraction > 0.0 && label_fraction <= 1.0, "label_fraction must be in (0, 1]");
  require(outer_iterations >= 0, "outer_iterations must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(eval_every >= 1, "eval_every must be >= 1");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(lr_G > 0 && lr_R > 0 && lr_MC > 0 && lr_feature_gen > 0, "learning rates must be > 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(grad_clip > 0.0, "grad_clip must be > 0");
  require(max_len >= 1, "max_len must be >= 1");
  require(entropy_weight >= 0.0, "entropy_weight must be >= 0");
  require(temperature > 0.0, "temperature must be > 0");
  require(pretrain_epochs >= 0, "pretrain_epochs must be >= 0");
  require(gen_embed_dim >= 1 && gen_state_dim >= 1 && gen_ff_layers >= 0 && gen_ff_dim >= 1,
          "generator dimensions");
  require(gen_dropout >= 0.0 && gen_dropout < 1.0, "gen_dropout must be in [0, 1)");
  require(baseline_decay >= 0.0 && baseline_decay < 1.0, "baseline_decay must be in [0, 1)");
  require(reward_embed_dim >= 1 && reward_hidden_dim >= 1 && reward_hidden_layers >= 0,
          "reward dimensions");
  require(reward_dropout >= 0.0 && reward_dropout < 1.0, "reward_dropout must be in [0, 1)");
  require(d >= 1 && enc_embed_dim >= 1 && enc_hidden_dim >= 1 && clf_hidden_dim >= 0,
          "encoder/classifier dimensions");
  require(loss_weight_l >= 0 && loss_weight_u >= 0 && loss_weight_f >= 0, "loss weights must be >= 0");
  require(noise_dim >= 1 && feature_gen_hidden_dim >= 0, "feature generator dimensions");
  require(data_source == "synth" || data_source == "files", "data_source must be synth|files");
  require(data_source != "files" || (!train_path.empty() && !test_path.empty()),
          "train_path and test_path are required for data_source=files");
  require(data_format == "tsv" || data_format == "trec", "data_format must be tsv|trec");
  require(label_field == "coarse" || label_field == "fine", "label_field must be coarse|fine");
  require(encoding == "auto" || encoding == "utf-8" || encoding == "latin-1",
          "encoding must be auto|utf-8|latin-1");
  require(min_freq >= 1, "min_freq must be >= 1");
  require(synth_grammar == "topic" || synth_grammar == "disjoint", "synth_grammar must be topic|disjoint");
  require(synth_train >= 2 && synth_test >= 1, "synth sizes");
  require(feature_file.empty() || !uses_text_generator(variant),
          "feature_file cannot be combined with READ/D_READ (generated text needs the encoder)");
}

json to_json(const TrainConfig& c) {
  json j;
  j["variant"] = std::string(to_string(c.variant));
  visit_fields(c, [&j](const char* name, const auto& v) { j[name] = v; });
  return j;
}

TrainConfig merge_json(TrainConfig base, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  std::map<std::string, std::function<void(const json&)>> setters;
  setters["variant"] = [&base](const json& v) { base.variant = parse_variant(v.get<std::string>()); };
  visit_fields(base, [&setters](const char* name, auto& field) {
    setters[name] = [&field](const json& v) { field = v.get<std::decay_t<decltype(field)>>(); };
  });
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + key + "': " + e.what());
    }
  }
  return base;
}

TrainConfig config_from_json(const json& j) { return merge_json(TrainConfig{}, j); }

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace readlab

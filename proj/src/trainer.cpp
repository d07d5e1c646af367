#include "readlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "readlab/checkpoint.hpp"
#include "readlab/eval.hpp"

namespace readlab::trainer {

using nlohmann::json;

FeatureGenerator::FeatureGenerator(int noise_dim, int hidden_dim, int output_dim,
                                   std::uint64_t seed)
    : noise_dim_(noise_dim),
      mlp_("fgen.ff", {noise_dim, hidden_dim, output_dim}, nn::Activation::LeakyRelu,
           nn::Activation::Identity) {
  Rng rng(seed);
  for (nn::Linear& l : mlp_.layers()) {
    nn::init_glorot(l.W, rng);
    l.b.value.setZero();
  }
}

nn::ParamList FeatureGenerator::params() {
  nn::ParamList out;
  mlp_.collect(out);
  return out;
}

nn::Vec FeatureGenerator::sample_noise(Rng& rng) const {
  std::normal_distribution<double> n01(0.0, 1.0);
  nn::Vec z(noise_dim_);
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = n01(rng);
  return z;
}

namespace {

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

std::vector<corpus::ClassTemplates> grammar_by_name(const std::string& name) {
  if (name == "disjoint") return corpus::disjoint_grammar();
  return corpus::topic_grammar();
}

}  // namespace

PreparedData prepare_dataset(const TrainConfig& cfg) {
  cfg.validate();
  PreparedData data;
  std::vector<corpus::Example> train;
  std::vector<corpus::Example> test;
  if (cfg.data_source == "synth") {
    const auto classes = grammar_by_name(cfg.synth_grammar);
    for (const auto& c : classes) data.labels.resolve(c.name);
    data.labels.frozen = true;
    train = corpus::synth_grammar(cfg.synth_seed, cfg.synth_train, classes);
    test = corpus::synth_grammar(derive_seed(cfg.synth_seed, "test"), cfg.synth_test, classes);
    std::uint64_t h = fnv1a64(cfg.synth_grammar);
    for (const auto* part : {&train, &test}) {
      for (const auto& ex : *part) h = fnv1a64(ex.text + "\t" + std::to_string(*ex.label) + "\n", h);
    }
    data.checksums.emplace_back("synth:" + cfg.synth_grammar, hex64(h));
  } else {
    corpus::LoadOptions opts;
    opts.format = corpus::parse_text_format(cfg.data_format);
    opts.label_field = corpus::parse_label_field(cfg.label_field);
    opts.encoding = corpus::parse_encoding(cfg.encoding);
    train = corpus::load_label_text(cfg.train_path, opts, data.labels);
    data.labels.frozen = true;
    test = corpus::load_label_text(cfg.test_path, opts, data.labels);
    data.checksums.emplace_back(cfg.train_path, file_checksum(cfg.train_path));
    data.checksums.emplace_back(cfg.test_path, file_checksum(cfg.test_path));
  }

  data.vocab = corpus::build_vocab(train, cfg.min_freq);
  corpus::encode_all(train, data.vocab, cfg.max_len);
  corpus::encode_all(test, data.vocab, cfg.max_len);
  data.split = corpus::split_labeled(train, cfg.label_fraction, derive_seed(cfg.seed, "split"),
                                     data.labels.size());
  data.split.test = std::move(test);

  if (!cfg.feature_file.empty()) {
    data.features = classifier::load_feature_file(cfg.feature_file);
    if (data.features->dim != cfg.d)
      throw ConfigError("feature file dimension " + std::to_string(data.features->dim) +
                        " does not match d = " + std::to_string(cfg.d));
    data.checksums.emplace_back(cfg.feature_file, file_checksum(cfg.feature_file));
  }
  return data;
}

classifier::ModelInput model_input(const PreparedData& data, const corpus::Example& ex, bool test) {
  if (data.features) {
    const std::string id = (test ? "test:" : "train:") + std::to_string(ex.index);
    return classifier::ModelInput::from_features(data.features->at(id));
  }
  return classifier::ModelInput::from_tokens(ex.tokens);
}

RunState make_run_state(const TrainConfig& cfg, const PreparedData& data) {
  cfg.validate();
  RunState s;
  s.config = cfg;
  const std::uint64_t seed = cfg.seed;
  const int vocab = data.vocab.size();
  const int k = data.split.k;

  s.model = std::make_unique<classifier::Model>();
  if (!data.features) {
    s.model->encoder.emplace(
        classifier::EncoderConfig{vocab, cfg.enc_embed_dim, cfg.enc_hidden_dim, cfg.d, corpus::kPad},
        derive_seed(seed, "init.encoder"));
  }
  s.model->head = classifier::Classifier({cfg.d, cfg.classifier_hidden(), k, cfg.leaky_slope},
                                         derive_seed(seed, "init.classifier"));
  s.opt_model = std::make_unique<nn::AdamW>(
      s.model->params(), nn::AdamW::Options{.lr = cfg.lr_MC, .weight_decay = cfg.weight_decay});

  if (uses_text_generator(cfg.variant)) {
    generator::GeneratorConfig gc;
    gc.vocab_size = vocab;
    gc.embed_dim = cfg.gen_embed_dim;
    gc.state_dim = cfg.gen_state_dim;
    gc.ff_layers = cfg.gen_ff_layers;
    gc.ff_dim = cfg.gen_ff_dim;
    gc.dropout = cfg.gen_dropout;
    gc.masked_ids = {corpus::kPad, corpus::kBos};
    s.gen = std::make_unique<generator::Generator>(gc, derive_seed(seed, "init.gen"));
    s.opt_gen = std::make_unique<nn::AdamW>(
        s.gen->params(), nn::AdamW::Options{.lr = cfg.lr_G, .weight_decay = cfg.weight_decay});

    reward::RewardConfig rc;
    rc.state_dim = cfg.gen_state_dim;
    rc.vocab_size = vocab;
    rc.action_embed_dim = cfg.reward_embed_dim;
    rc.hidden_dim = cfg.reward_hidden_dim;
    rc.hidden_layers = cfg.reward_hidden_layers;
    rc.dropout = cfg.reward_dropout;
    s.reward = std::make_unique<reward::RewardNet>(rc, derive_seed(seed, "init.reward"));
    s.opt_reward = std::make_unique<nn::AdamW>(
        s.reward->params(), nn::AdamW::Options{.lr = cfg.lr_R, .weight_decay = cfg.weight_decay});
    s.baseline.decay = cfg.baseline_decay;
  }
  if (cfg.variant == Variant::GanFeature) {
    s.feature_gen = std::make_unique<FeatureGenerator>(cfg.noise_dim, cfg.feature_gen_hidden(), cfg.d,
                                                       derive_seed(seed, "init.feature_gen"));
    s.opt_feature_gen = std::make_unique<nn::AdamW>(
        s.feature_gen->params(),
        nn::AdamW::Options{.lr = cfg.lr_feature_gen, .weight_decay = cfg.weight_decay});
  }

  s.rng_gen = make_stream(seed, "gen");
  s.rng_reward = make_stream(seed, "reward");
  s.rng_clf = make_stream(seed, "clf");
  s.rng_batch = make_stream(seed, "batch");
  s.rng_noise = make_stream(seed, "noise");
  s.rng_pretrain = make_stream(seed, "pretrain");
  return s;
}

std::vector<double> pretrain_generator(RunState& state, const PreparedData& data) {
  if (!state.gen || state.pretrained) return {};
  std::vector<std::vector<int>> seqs;
  for (const auto* part : {&data.split.labeled, &data.split.unlabeled}) {
    for (const corpus::Example& ex : *part) seqs.push_back(ex.tokens);
  }
  generator::MleOptions mo;
  mo.epochs = state.config.pretrain_epochs;
  mo.lr = state.config.pretrain_lr;
  mo.weight_decay = state.config.weight_decay;
  mo.batch_size = state.config.batch_size;
  mo.clip_norm = state.config.grad_clip;
  std::vector<double> curve = generator::mle_pretrain(*state.gen, seqs, mo, state.rng_pretrain);
  state.pretrained = true;
  return curve;
}

namespace {

std::vector<std::size_t> draw(std::size_t n, std::size_t pool, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = pick(rng);
  return out;
}

void standardize(std::vector<std::vector<double>>& rewards,
                 std::span<const generator::Trajectory> trajs) {
  double sum = 0.0, sq = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (int t = 0; t < reward::active_steps(trajs[i]); ++t) {
      sum += rewards[i][static_cast<std::size_t>(t)];
      ++n;
    }
  }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (int t = 0; t < reward::active_steps(trajs[i]); ++t) {
      const double d = rewards[i][static_cast<std::size_t>(t)] - mean;
      sq += d * d;
    }
  }
  const double sd = std::sqrt(sq / static_cast<double>(n));
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (int t = 0; t < reward::active_steps(trajs[i]); ++t) {
      auto& r = rewards[i][static_cast<std::size_t>(t)];
      r = (r - mean) / (sd + 1e-8);
    }
  }
}

void feature_generator_step(RunState& s) {
  FeatureGenerator& fg = *s.feature_gen;
  const nn::ParamList fparams = fg.params();
  const nn::ParamList hparams = s.model->head.params();
  nn::zero_grad(fparams);
  const int n = s.config.batch_size;
  for (int i = 0; i < n; ++i) {
    const nn::Mlp::Trace ftr = fg.forward_trace(fg.sample_noise(s.rng_noise));
    const nn::Mlp::Trace htr = s.model->head.forward_trace(ftr.output);
    const classifier::ClassProbs p{nn::softmax(htr.output), s.model->head.k()};
    // Non-saturating: minimize -log(1 - p_fake) of generated features.
    const nn::Vec g = classifier::loss_unlabeled_real_grad(p) / static_cast<double>(n);
    fg.backward(ftr, s.model->head.backward(htr, g));
  }
  nn::zero_grad(hparams);  // the head is not updated here
  nn::clip_grad_norm(fparams, s.config.grad_clip);
  s.opt_feature_gen->step();
  if (!nn::all_finite(fparams)) throw classifier::TrainingAborted("feature generator diverged");
}

}  // namespace

IterationMetrics train_iteration(RunState& s, const PreparedData& data) {
  const TrainConfig& cfg = s.config;
  const auto& L = data.split.labeled;
  const auto& U = data.split.unlabeled;
  const auto& unl = U.empty() ? L : U;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  // Batch draws are identical for every variant.
  const auto lab_idx = draw(bs, L.size(), s.rng_batch);
  const auto real_idx = draw(bs, L.size() + U.size(), s.rng_batch);
  const auto unl_idx = draw(bs, unl.size(), s.rng_batch);
  auto pool = [&](std::size_t i) -> const corpus::Example& { return i < L.size() ? L[i] : U[i - L.size()]; };

  ++s.iteration;
  IterationMetrics m;
  m.iteration = s.iteration;

  classifier::ClassifierBatch batch;
  for (std::size_t i : lab_idx) {
    batch.labeled.push_back(model_input(data, L[i], false));
    batch.labels.push_back(*L[i].label);
  }
  const bool adversarial = cfg.variant != Variant::Baseline;
  if (adversarial) {
    for (std::size_t i : real_idx) batch.real.push_back(model_input(data, pool(i), false));
  }

  std::vector<generator::Trajectory> trajs;
  if (uses_text_generator(cfg.variant)) {
    trajs = s.gen->sample(cfg.batch_size, cfg.max_len, s.rng_gen, cfg.temperature);
    for (const auto& tr : trajs) batch.fake.push_back(classifier::ModelInput::from_tokens(tr.tokens));
  } else if (cfg.variant == Variant::GanFeature) {
    for (std::size_t i = 0; i < bs; ++i)
      batch.fake.push_back(classifier::ModelInput::from_features(
          s.feature_gen->forward(s.feature_gen->sample_noise(s.rng_noise))));
  }

  const classifier::LossWeights w{cfg.loss_weight_l, cfg.loss_weight_u, cfg.loss_weight_f};
  const classifier::LossBreakdown lb = classifier::classifier_step(*s.model, *s.opt_model, batch, w);
  m.loss_l = lb.labeled;
  if (adversarial) {
    m.loss_u = lb.unlabeled;
    m.loss_f = lb.fake;
  }

  if (uses_text_generator(cfg.variant)) {
    const bool coupled = cfg.variant == Variant::Read;
    const reward::RewardMode mode = coupled ? reward::RewardMode::Read : reward::RewardMode::DRead;

    std::vector<double> p_gen(trajs.size(), 0.0);
    std::vector<double> gen_logq(trajs.size());
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      if (coupled) p_gen[i] = s.model->predict(batch.fake[i]).p_fake();
      gen_logq[i] = trajs[i].log_prob();
    }
    std::vector<generator::Trajectory> real;
    std::vector<double> p_real(unl_idx.size(), 0.0);
    for (std::size_t j = 0; j < unl_idx.size(); ++j) {
      const corpus::Example& ex = unl[unl_idx[j]];
      real.push_back(s.gen->teacher_force(ex.tokens));
      if (coupled) p_real[j] = s.model->predict(classifier::ModelInput::from_tokens(ex.tokens)).p_fake();
    }
    const reward::IrlBatch irl{real, trajs, gen_logq, p_real, p_gen};
    const reward::IrlDiagnostics rd = reward::irl_update(*s.reward, *s.opt_reward, irl, mode, &s.rng_reward);
    m.mean_reward_real = rd.mean_real_reward;
    m.mean_reward_gen = rd.mean_gen_reward;

    std::vector<std::vector<double>> rewards;
    rewards.reserve(trajs.size());
    for (std::size_t i = 0; i < trajs.size(); ++i)
      rewards.push_back(reward::trajectory_reward(*s.reward, trajs[i], p_gen[i], mode).per_step);
    if (cfg.standardize_rewards) standardize(rewards, trajs);
    const generator::PolicyGradientDiagnostics pg = generator::policy_gradient_step(
        *s.gen, *s.opt_gen, trajs, rewards, cfg.entropy_weight, s.baseline, cfg.grad_clip);
    m.entropy = pg.mean_entropy;
    m.p_fake_gen = std::move(p_gen);
    for (const auto& tr : trajs) m.generated.push_back(tr.tokens);
  } else if (cfg.variant == Variant::GanFeature) {
    feature_generator_step(s);
  }
  return m;
}

double test_accuracy(const RunState& state, const PreparedData& data) {
  std::vector<classifier::ModelInput> inputs;
  std::vector<int> gold;
  inputs.reserve(data.split.test.size());
  for (const corpus::Example& ex : data.split.test) {
    inputs.push_back(model_input(data, ex, true));
    gold.push_back(*ex.label);
  }
  return eval::accuracy(*state.model, inputs, gold);
}

json metrics_record(const IterationMetrics& m, const TrainConfig& cfg) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["iteration"] = m.iteration;
  j["variant"] = std::string(to_string(cfg.variant));
  j["seed"] = cfg.seed;
  j["label_fraction"] = cfg.label_fraction;
  j["loss_l"] = opt(m.loss_l);
  j["loss_u"] = opt(m.loss_u);
  j["loss_f"] = opt(m.loss_f);
  j["mean_reward_real"] = opt(m.mean_reward_real);
  j["mean_reward_gen"] = opt(m.mean_reward_gen);
  j["entropy"] = opt(m.entropy);
  if (m.test_accuracy) j["test_accuracy"] = *m.test_accuracy;
  return j;
}

namespace {

void add_optimizer(std::vector<checkpoint::NamedTensor>& out, json& steps, const std::string& name,
                   const nn::AdamW* opt) {
  if (!opt) return;
  for (std::size_t i = 0; i < opt->first_moments().size(); ++i) {
    out.push_back({name + ".m." + std::to_string(i), opt->first_moments()[i]});
    out.push_back({name + ".v." + std::to_string(i), opt->second_moments()[i]});
  }
  steps[name] = opt->steps();
}

void restore_optimizer(std::span<const checkpoint::NamedTensor> tensors, const json& steps,
                       const std::string& name, nn::AdamW* opt) {
  if (!opt) return;
  std::unordered_map<std::string, const nn::Mat*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  for (std::size_t i = 0; i < opt->first_moments().size(); ++i) {
    auto m = by_name.find(name + ".m." + std::to_string(i));
    auto v = by_name.find(name + ".v." + std::to_string(i));
    if (m == by_name.end() || v == by_name.end()) throw std::runtime_error("checkpoint lacks " + name + " state");
    opt->first_moments()[i] = *m->second;
    opt->second_moments()[i] = *v->second;
  }
  opt->set_steps(steps.at(name).get<long>());
}

}  // namespace

void save_state(const RunState& s, const std::filesystem::path& dir) {
  auto& ms = const_cast<RunState&>(s);  // params() hands out mutable pointers; nothing is modified
  std::vector<checkpoint::NamedTensor> tensors = checkpoint::snapshot(ms.model->params());
  auto append = [&tensors](const nn::ParamList& ps) {
    for (auto& t : checkpoint::snapshot(ps)) tensors.push_back(std::move(t));
  };
  if (ms.gen) append(ms.gen->params());
  if (ms.reward) append(ms.reward->params());
  if (ms.feature_gen) append(ms.feature_gen->params());
  json steps = json::object();
  add_optimizer(tensors, steps, "opt_model", s.opt_model.get());
  add_optimizer(tensors, steps, "opt_gen", s.opt_gen.get());
  add_optimizer(tensors, steps, "opt_reward", s.opt_reward.get());
  add_optimizer(tensors, steps, "opt_feature_gen", s.opt_feature_gen.get());
  checkpoint::save_tensors(dir, tensors);

  const json state = {{"iteration", s.iteration},
                      {"pretrained", s.pretrained},
                      {"baseline", s.baseline.value},
                      {"optimizer_steps", steps},
                      {"rng",
                       {{"gen", rng_state(s.rng_gen)},
                        {"reward", rng_state(s.rng_reward)},
                        {"clf", rng_state(s.rng_clf)},
                        {"batch", rng_state(s.rng_batch)},
                        {"noise", rng_state(s.rng_noise)},
                        {"pretrain", rng_state(s.rng_pretrain)}}},
                      {"config", to_json(s.config)}};
  checkpoint::write_atomic(dir / "state.json", state.dump(2) + "\n");
}

RunState load_state(const TrainConfig& cfg, const PreparedData& data,
                    const std::filesystem::path& dir) {
  std::ifstream in(dir / "state.json");
  if (!in) throw std::runtime_error("missing state.json in " + dir.string());
  const json st = json::parse(in);
  RunState s = make_run_state(cfg, data);
  const auto tensors = checkpoint::load_tensors(dir);
  checkpoint::restore(s.model->params(), tensors);
  if (s.gen) checkpoint::restore(s.gen->params(), tensors);
  if (s.reward) checkpoint::restore(s.reward->params(), tensors);
  if (s.feature_gen) checkpoint::restore(s.feature_gen->params(), tensors);
  const json& steps = st.at("optimizer_steps");
  restore_optimizer(tensors, steps, "opt_model", s.opt_model.get());
  restore_optimizer(tensors, steps, "opt_gen", s.opt_gen.get());
  restore_optimizer(tensors, steps, "opt_reward", s.opt_reward.get());
  restore_optimizer(tensors, steps, "opt_feature_gen", s.opt_feature_gen.get());
  s.iteration = st.at("iteration").get<long>();
  s.pretrained = st.at("pretrained").get<bool>();
  s.baseline.value = st.at("baseline").get<double>();
  const json& r = st.at("rng");
  set_rng_state(s.rng_gen, r.at("gen").get<std::string>());
  set_rng_state(s.rng_reward, r.at("reward").get<std::string>());
  set_rng_state(s.rng_clf, r.at("clf").get<std::string>());
  set_rng_state(s.rng_batch, r.at("batch").get<std::string>());
  set_rng_state(s.rng_noise, r.at("noise").get<std::string>());
  set_rng_state(s.rng_pretrain, r.at("pretrain").get<std::string>());
  return s;
}

RunResult run(const TrainConfig& cfg, const PreparedData& data, const RunOptions& opts) {
  RunResult res;
  res.state = opts.resume_from ? load_state(cfg, data, *opts.resume_from) : make_run_state(cfg, data);
  RunState& s = res.state;

  std::ofstream metrics_out;
  if (opts.outdir) {
    std::filesystem::create_directories(*opts.outdir);
    const auto path = *opts.outdir / "metrics.jsonl";
    std::vector<std::string> kept;
    if (opts.resume_from) {
      std::ifstream prev(path);
      std::string line;
      while (std::getline(prev, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        if (rec.at("iteration").get<long>() > s.iteration) break;
        kept.push_back(line);
        res.metrics.push_back(rec);
      }
    }
    metrics_out.open(path, std::ios::binary | std::ios::trunc);
    if (!metrics_out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& line : kept) metrics_out << line << '\n';
    metrics_out.flush();
  }
  bool have_best = false;
  for (const json& rec : res.metrics) {
    if (rec.contains("test_accuracy")) {
      const double a = rec["test_accuracy"].get<double>();
      res.best_accuracy = have_best ? std::max(res.best_accuracy, a) : a;
      res.final_accuracy = a;
      have_best = true;
    }
  }

  auto emit = [&](const IterationMetrics& m) {
    json rec = metrics_record(m, cfg);
    if (m.test_accuracy) {
      res.final_accuracy = *m.test_accuracy;
      res.best_accuracy = have_best ? std::max(res.best_accuracy, *m.test_accuracy) : *m.test_accuracy;
      have_best = true;
    }
    if (metrics_out.is_open()) {
      metrics_out << rec.dump() << '\n';
      metrics_out.flush();
    }
    res.metrics.push_back(std::move(rec));
  };
  auto checkpoint_now = [&]() {
    if (!opts.outdir) return;
    const auto dir = *opts.outdir / ("ckpt-" + std::to_string(s.iteration));
    save_state(s, dir);
    res.final_checkpoint = dir;
  };

  if (!opts.resume_from) pretrain_generator(s, data);

  if (cfg.outer_iterations == 0) {
    IterationMetrics m;
    m.test_accuracy = test_accuracy(s, data);
    emit(m);
  }
  while (s.iteration < cfg.outer_iterations) {
    IterationMetrics m = train_iteration(s, data);
    if (s.iteration % cfg.eval_every == 0 || s.iteration == cfg.outer_iterations)
      m.test_accuracy = test_accuracy(s, data);
    emit(m);
    if (opts.stop_after && s.iteration == *opts.stop_after) {
      checkpoint_now();
      return res;
    }
    if (cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0 &&
        s.iteration != cfg.outer_iterations)
      checkpoint_now();
  }
  res.completed = true;
  if (opts.write_final_checkpoint) checkpoint_now();
  return res;
}

}  // namespace readlab::trainer

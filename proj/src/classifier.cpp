#include "readlab/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace readlab::classifier {

Encoder::Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.vocab_size < 1) throw std::invalid_argument("encoder vocab_size must be >= 1");
  embed_ = nn::Param("enc.embed", cfg_.vocab_size, cfg_.embed_dim);
  mlp_ = nn::Mlp("enc.ff", {cfg_.embed_dim, cfg_.hidden_dim, cfg_.output_dim}, nn::Activation::Tanh,
                 nn::Activation::Identity);
  Rng rng(seed);
  nn::init_uniform(embed_, 0.1, rng);
  for (nn::Linear& l : mlp_.layers()) {
    nn::init_glorot(l.W, rng);
    l.b.value.setZero();
  }
}

nn::ParamList Encoder::params() {
  nn::ParamList out{&embed_};
  mlp_.collect(out);
  return out;
}

Encoder::Trace Encoder::forward_trace(std::span<const int> tokens) const {
  Trace tr;
  tr.pooled = nn::Vec::Zero(cfg_.embed_dim);
  for (int id : tokens) {
    if (id == cfg_.pad_id) continue;
    if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("encoder: token id out of range");
    tr.ids.push_back(id);
    tr.pooled += embed_.value.row(id).transpose();
  }
  if (tr.ids.empty()) throw std::invalid_argument("encoder: input has no non-PAD tokens");
  tr.pooled /= static_cast<double>(tr.ids.size());
  tr.mlp = mlp_.forward_trace(tr.pooled, nullptr);
  return tr;
}

FeatureVector Encoder::encode(std::span<const int> tokens) const {
  return forward_trace(tokens).mlp.output;
}

void Encoder::backward(const Trace& trace, const nn::Vec& dh) {
  const nn::Vec dpool = mlp_.backward(trace.mlp, dh) / static_cast<double>(trace.ids.size());
  for (int id : trace.ids) embed_.grad.row(id) += dpool.transpose();
}

int ClassProbs::predicted_label() const {
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (probs[j] > probs[best]) best = j;
  }
  return best;
}

Classifier::Classifier(ClassifierConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.num_classes < 1) throw std::invalid_argument("classifier needs k >= 1");
  mlp_ = nn::Mlp("clf.head", {cfg_.input_dim, cfg_.hidden_dim, cfg_.num_classes + 1},
                 nn::Activation::LeakyRelu, nn::Activation::Identity, 0.0, cfg_.leaky_slope);
  Rng rng(seed);
  for (nn::Linear& l : mlp_.layers()) {
    nn::init_glorot(l.W, rng);
    l.b.value.setZero();
  }
}

nn::ParamList Classifier::params() {
  nn::ParamList out;
  mlp_.collect(out);
  return out;
}

void Classifier::check_dim(const FeatureVector& h) const {
  if (h.size() != cfg_.input_dim)
    throw std::invalid_argument("classifier: feature has dimension " + std::to_string(h.size()) +
                                ", expected " + std::to_string(cfg_.input_dim));
}

nn::Vec Classifier::logits(const FeatureVector& h) const {
  check_dim(h);
  return mlp_.forward(h);
}

ClassProbs Classifier::classify(const FeatureVector& h) const {
  return {nn::softmax(logits(h)), cfg_.num_classes};
}

nn::Mlp::Trace Classifier::forward_trace(const FeatureVector& h) const {
  check_dim(h);
  return mlp_.forward_trace(h, nullptr);
}

nn::Vec Classifier::backward(const nn::Mlp::Trace& trace, const nn::Vec& dlogits) {
  return mlp_.backward(trace, dlogits);
}

namespace {

double real_mass(const ClassProbs& p) { return p.probs.head(p.k).sum(); }

}  // namespace

double loss_labeled(const ClassProbs& p, int y) {
  if (y < 0 || y >= p.k) throw std::invalid_argument("loss_labeled: label must be < k");
  const double num = std::max(p.probs[y], kLogEps);
  const double den = std::max(real_mass(p), kLogEps);
  return std::log(den) - std::log(num);
}

double loss_unlabeled_real(const ClassProbs& p) {
  return -std::log(std::max(real_mass(p), kLogEps));
}

double loss_fake(const ClassProbs& p) { return -std::log(std::max(p.p_fake(), kLogEps)); }

nn::Vec loss_labeled_grad(const ClassProbs& p, int y) {
  if (y < 0 || y >= p.k) throw std::invalid_argument("loss_labeled: label must be < k");
  nn::Vec g = nn::Vec::Zero(p.k + 1);
  const double mass = real_mass(p);
  if (mass > 0.0) g.head(p.k) = p.probs.head(p.k) / mass;
  g[y] -= 1.0;
  return g;
}

nn::Vec loss_unlabeled_real_grad(const ClassProbs& p) {
  nn::Vec g = p.probs;
  const double mass = real_mass(p);
  if (mass > 0.0) g.head(p.k) -= p.probs.head(p.k) / mass;
  return g;
}

nn::Vec loss_fake_grad(const ClassProbs& p) {
  nn::Vec g = p.probs;
  g[p.k] -= 1.0;
  return g;
}

nn::ParamList Model::params() {
  nn::ParamList out;
  if (encoder) out = encoder->params();
  for (nn::Param* p : head.params()) out.push_back(p);
  return out;
}

FeatureVector Model::features(const ModelInput& x) const {
  if (x.features) return *x.features;
  if (!encoder) throw std::invalid_argument("token input given but no encoder is configured");
  return encoder->encode(x.tokens);
}

ClassProbs Model::predict(const ModelInput& x) const { return head.classify(features(x)); }

namespace {

enum class Part { Labeled, Real, Fake };

template <typename Fn>
void for_each_part(const ClassifierBatch& b, Fn&& fn) {
  if (b.labels.size() != b.labeled.size()) throw std::invalid_argument("labels/labeled size mismatch");
  for (std::size_t i = 0; i < b.labeled.size(); ++i) fn(Part::Labeled, b.labeled[i], b.labels[i]);
  for (const ModelInput& x : b.real) fn(Part::Real, x, -1);
  for (const ModelInput& x : b.fake) fn(Part::Fake, x, -1);
}

double part_scale(const ClassifierBatch& b, Part part, const LossWeights& w) {
  switch (part) {
    case Part::Labeled: return w.labeled / static_cast<double>(b.labeled.size());
    case Part::Real: return w.unlabeled / static_cast<double>(b.real.size());
    case Part::Fake: return w.fake / static_cast<double>(b.fake.size());
  }
  return 0.0;
}

void add_loss(LossBreakdown& lb, const ClassProbs& p, Part part, int y, const ClassifierBatch& b) {
  switch (part) {
    case Part::Labeled: lb.labeled += loss_labeled(p, y) / static_cast<double>(b.labeled.size()); break;
    case Part::Real: lb.unlabeled += loss_unlabeled_real(p) / static_cast<double>(b.real.size()); break;
    case Part::Fake: lb.fake += loss_fake(p) / static_cast<double>(b.fake.size()); break;
  }
}

void finish(LossBreakdown& lb, const LossWeights& w) {
  lb.total = w.labeled * lb.labeled + w.unlabeled * lb.unlabeled + w.fake * lb.fake;
  if (std::isnan(lb.total)) {
    std::ostringstream os;
    os << "classifier loss is NaN (L_l=" << lb.labeled << ", L_u=" << lb.unlabeled
       << ", L_f=" << lb.fake << ")";
    throw TrainingAborted(os.str());
  }
}

void check_normalized(const ClassProbs& p) {
  if (std::abs(p.probs.sum() - 1.0) > 1e-9) throw TrainingAborted("class probabilities not normalized");
}

}  // namespace

LossBreakdown classifier_losses(const Model& model, const ClassifierBatch& batch,
                                const LossWeights& w) {
  LossBreakdown lb;
  for_each_part(batch, [&](Part part, const ModelInput& x, int y) {
    add_loss(lb, model.predict(x), part, y, batch);
  });
  finish(lb, w);
  return lb;
}

LossBreakdown accumulate_classifier_gradient(Model& model, const ClassifierBatch& batch,
                                             const LossWeights& w) {
  LossBreakdown lb;
  for_each_part(batch, [&](Part part, const ModelInput& x, int y) {
    std::optional<Encoder::Trace> enc_trace;
    FeatureVector h;
    if (x.features) {
      h = *x.features;
    } else {
      if (!model.encoder) throw std::invalid_argument("token input given but no encoder is configured");
      enc_trace = model.encoder->forward_trace(x.tokens);
      h = enc_trace->mlp.output;
    }
    const nn::Mlp::Trace head_trace = model.head.forward_trace(h);
    const ClassProbs p{nn::softmax(head_trace.output), model.head.k()};
    check_normalized(p);
    add_loss(lb, p, part, y, batch);

    nn::Vec g;
    switch (part) {
      case Part::Labeled: g = loss_labeled_grad(p, y); break;
      case Part::Real: g = loss_unlabeled_real_grad(p); break;
      case Part::Fake: g = loss_fake_grad(p); break;
    }
    g *= part_scale(batch, part, w);
    const nn::Vec dh = model.head.backward(head_trace, g);
    if (enc_trace) model.encoder->backward(*enc_trace, dh);
  });
  finish(lb, w);
  return lb;
}

LossBreakdown classifier_step(Model& model, nn::AdamW& opt, const ClassifierBatch& batch,
                              const LossWeights& w) {
  const nn::ParamList params = model.params();
  nn::zero_grad(params);
  const LossBreakdown lb = accumulate_classifier_gradient(model, batch, w);
  opt.step();
  if (!nn::all_finite(params)) throw TrainingAborted("classifier parameters became non-finite");
  return lb;
}

const FeatureVector& FeatureTable::at(const std::string& id) const {
  auto it = rows.find(id);
  if (it == rows.end()) throw std::out_of_range("feature file has no row for id '" + id + "'");
  return it->second;
}

FeatureTable load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  FeatureTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw corpus::ParseError("expected id<TAB>features", line_no);
    std::vector<double> vals;
    std::stringstream ss(line.substr(tab + 1));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw corpus::ParseError("bad feature value '" + cell + "'", line_no);
      }
    }
    if (vals.empty()) throw corpus::ParseError("empty feature vector", line_no);
    if (table.dim == 0) table.dim = static_cast<int>(vals.size());
    if (static_cast<int>(vals.size()) != table.dim) throw corpus::ParseError("inconsistent feature dimension", line_no);
    table.rows[line.substr(0, tab)] = Eigen::Map<const nn::Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  }
  if (table.rows.empty()) throw std::runtime_error("feature file is empty");
  return table;
}

}  // namespace readlab::classifier

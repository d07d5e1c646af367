#include "readlab/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "readlab/checkpoint.hpp"
#include "readlab/trainer.hpp"

namespace readlab::eval {

double accuracy(const classifier::Model& model, std::span<const classifier::ModelInput> inputs,
                std::span<const int> gold) {
  if (inputs.empty()) throw std::invalid_argument("accuracy: empty test set");
  if (inputs.size() != gold.size()) throw std::invalid_argument("accuracy: inputs and labels differ in size");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (model.predict(inputs[i]).predicted_label() == gold[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

std::string format_number(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

namespace {

std::string cell_name(const SweepCell& c) {
  return std::string(to_string(c.variant)) + "_f" + format_number(c.fraction) + "_s" +
         std::to_string(c.seed);
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void run_cell(const TrainConfig& base, SweepCell& cell, const SweepOptions& opts) {
  TrainConfig cfg = base;
  cfg.variant = cell.variant;
  cfg.label_fraction = cell.fraction;
  cfg.seed = cell.seed;
  try {
    if (opts.before_cell) opts.before_cell(cfg);
    const trainer::PreparedData data = trainer::prepare_dataset(cfg);
    trainer::RunOptions ro;
    if (opts.outdir) {
      ro.outdir = *opts.outdir / "runs" / cell_name(cell);
      cell.metrics_path = *ro.outdir / "metrics.jsonl";
    }
    ro.write_final_checkpoint = false;
    const trainer::RunResult r = trainer::run(cfg, data, ro);
    cell.final_acc = r.final_accuracy;
    cell.best_acc = r.best_accuracy;
  } catch (const std::exception& e) {
    cell.failed = true;
    cell.reason = e.what();
  }
}

}  // namespace

SweepResult sweep(const TrainConfig& base, std::span<const double> fractions,
                  std::span<const Variant> variants, std::span<const std::uint64_t> seeds,
                  const SweepOptions& opts) {
  if (fractions.empty() || variants.empty() || seeds.empty())
    throw std::invalid_argument("sweep: empty grid");
  SweepResult result;
  for (Variant v : variants)
    for (double f : fractions)
      for (std::uint64_t s : seeds) {
        SweepCell c;
        c.variant = v;
        c.fraction = f;
        c.seed = s;
        result.cells.push_back(c);
      }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) run_cell(base, result.cells[i], opts);
  };
  const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(result.cells.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (opts.outdir) {
    std::filesystem::create_directories(*opts.outdir);
    write_sweep_csv(*opts.outdir / "sweep.csv", result);
    write_sweep_failures(*opts.outdir / "sweep_failures.csv", result);
    write_text(*opts.outdir / "sweep.svg", sweep_svg(result, variants));
    for (Variant v : variants) {
      const Variant one[] = {v};
      write_text(*opts.outdir / ("sweep_" + std::string(to_string(v)) + ".svg"), sweep_svg(result, one));
    }
  }
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "variant,fraction,seed,final_acc,best_acc\n";
  for (const SweepCell& c : result.cells) {
    if (c.failed) continue;
    out << to_string(c.variant) << ',' << format_number(c.fraction) << ',' << c.seed << ','
        << c.final_acc << ',' << c.best_acc << '\n';
  }
  write_text(path, out.str());
}

void write_sweep_failures(const std::filesystem::path& path, const SweepResult& result) {
  std::ostringstream out;
  out << "variant,fraction,seed,reason\n";
  for (const SweepCell& c : result.cells) {
    if (!c.failed) continue;
    std::string reason = c.reason;
    std::replace(reason.begin(), reason.end(), '"', '\'');
    std::replace(reason.begin(), reason.end(), '\n', ' ');
    out << to_string(c.variant) << ',' << format_number(c.fraction) << ',' << c.seed << ",\"" << reason
        << "\"\n";
  }
  write_text(path, out.str());
}

std::string sweep_svg(const SweepResult& result, std::span<const Variant> variants) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"};
  constexpr double W = 640, H = 420, L = 60, R = 150, T = 30, B = 50;
  std::set<double> fracs;
  for (const SweepCell& c : result.cells) fracs.insert(c.fraction);
  const double fmin = fracs.empty() ? 0.0 : *fracs.begin();
  const double fmax = fracs.empty() ? 1.0 : *fracs.rbegin();
  // log-scaled x axis when all fractions are positive and span more than one value
  const bool logx = fmin > 0.0 && fmax > fmin;
  auto xpos = [&](double f) {
    if (fmax == fmin) return L + (W - L - R) / 2;
    const double u = logx ? (std::log(f) - std::log(fmin)) / (std::log(fmax) - std::log(fmin))
                          : (f - fmin) / (fmax - fmin);
    return L + u * (W - L - R);
  };
  auto ypos = [&](double acc) { return T + (1.0 - acc) * (H - T - B); };

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double acc = i / 4.0;
    s << "<text x=\"" << L - 8 << "\" y=\"" << ypos(acc) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
      << format_number(acc) << "</text>\n";
  }
  for (double f : fracs) {
    s << "<text x=\"" << xpos(f) << "\" y=\"" << H - B + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
      << format_number(f) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10
    << "\" font-size=\"12\" text-anchor=\"middle\">label fraction</text>\n";
  s << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 15 "
    << (T + H - B) / 2 << ")\" text-anchor=\"middle\">test accuracy (mean over seeds)</text>\n";

  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    std::map<double, std::pair<double, int>> by_frac;
    for (const SweepCell& c : result.cells) {
      if (c.variant != variants[vi] || c.failed) continue;
      auto& [sum, n] = by_frac[c.fraction];
      sum += c.final_acc;
      ++n;
    }
    const char* color = kColors[vi % 4];
    std::ostringstream pts;
    pts << std::fixed << std::setprecision(2);
    for (const auto& [f, sn] : by_frac) pts << xpos(f) << ',' << ypos(sn.first / sn.second) << ' ';
    if (!by_frac.empty()) {
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str()
        << "\"/>\n";
      for (const auto& [f, sn] : by_frac)
        s << "<circle cx=\"" << xpos(f) << "\" cy=\"" << ypos(sn.first / sn.second) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    const double ly = T + 20.0 * static_cast<double>(vi);
    s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
      << to_string(variants[vi]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

Projection pca_2d(const Eigen::MatrixXd& points) {
  if (points.rows() < 1 || points.cols() < 1) throw std::invalid_argument("pca_2d: no data");
  Projection p;
  p.mean = points.colwise().mean().transpose();
  const Eigen::MatrixXd centered = points.rowwise() - p.mean.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::MatrixXd& V = svd.matrixV();
  p.components = Eigen::MatrixXd::Zero(points.cols(), 2);
  const Eigen::Index take = std::min<Eigen::Index>(2, V.cols());
  p.components.leftCols(take) = V.leftCols(take);
  // Deterministic sign: the largest-magnitude loading of each axis is positive.
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    p.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (p.components(arg, c) < 0) p.components.col(c) *= -1.0;
  }
  p.coords = centered * p.components;
  return p;
}

double silhouette_score(const Eigen::MatrixXd& points, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (labels.size() != n) throw std::invalid_argument("silhouette_score: label count mismatch");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette_score: needs at least two clusters");

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, double> dist_sum;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      dist_sum[labels[j]] += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    }
    const std::size_t own = sizes[labels[i]];
    if (own == 1) continue;
    const double a = dist_sum[labels[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, size] : sizes) {
      if (label == labels[i]) continue;
      b = std::min(b, dist_sum[label] / static_cast<double>(size));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

double cosine_similarity(const nn::Vec& a, const nn::Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Eigen::MatrixXd feature_matrix(const classifier::Model& model,
                               std::span<const classifier::ModelInput> inputs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(inputs.size()), model.head.config().input_dim);
  for (std::size_t i = 0; i < inputs.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = model.features(inputs[i]).transpose();
  return out;
}

Projection export_features(const Eigen::MatrixXd& features, std::span<const int> labels,
                           std::span<const std::string> label_names,
                           const std::filesystem::path& tsv_path,
                           const std::filesystem::path& csv_path) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw std::invalid_argument("export_features: label count mismatch");
  auto name = [&](int l) {
    return l >= 0 && static_cast<std::size_t>(l) < label_names.size() ? label_names[static_cast<std::size_t>(l)]
                                                                       : std::to_string(l);
  };
  std::ostringstream tsv;
  tsv << std::setprecision(17);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    tsv << name(labels[static_cast<std::size_t>(i)]) << '\t';
    for (Eigen::Index j = 0; j < features.cols(); ++j) tsv << (j ? "," : "") << features(i, j);
    tsv << '\n';
  }
  write_text(tsv_path, tsv.str());

  const Projection p = pca_2d(features);
  std::ostringstream csv;
  csv << std::setprecision(17) << "label,x,y\n";
  for (Eigen::Index i = 0; i < p.coords.rows(); ++i)
    csv << name(labels[static_cast<std::size_t>(i)]) << ',' << p.coords(i, 0) << ',' << p.coords(i, 1) << '\n';
  write_text(csv_path, csv.str());
  return p;
}

std::vector<GenReportRow> nearest_neighbours(const classifier::Encoder& encoder,
                                             std::span<const std::vector<int>> generated,
                                             std::span<const corpus::Example> real,
                                             const corpus::Vocabulary& vocab) {
  if (real.empty()) throw std::invalid_argument("generation report: empty real corpus");
  std::vector<nn::Vec> real_h;
  real_h.reserve(real.size());
  for (const corpus::Example& ex : real) real_h.push_back(encoder.encode(ex.tokens));

  std::vector<GenReportRow> rows;
  rows.reserve(generated.size());
  for (const auto& g : generated) {
    const nn::Vec h = encoder.encode(g);
    std::size_t best = 0;
    double best_cos = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < real_h.size(); ++j) {
      const double c = cosine_similarity(h, real_h[j]);
      if (c > best_cos) {
        best_cos = c;
        best = j;
      }
    }
    rows.push_back({corpus::decode(g, vocab), real[best].text, best_cos});
  }
  return rows;
}

std::vector<GenReportRow> generation_report(const generator::Generator& gen,
                                            const classifier::Encoder& encoder,
                                            std::span<const corpus::Example> real,
                                            const corpus::Vocabulary& vocab, int n, int max_len,
                                            std::uint64_t seed, double temperature) {
  if (n < 1) throw std::invalid_argument("generation report: n must be >= 1");
  if (real.empty()) throw std::invalid_argument("generation report: empty real corpus");
  std::vector<std::vector<int>> seqs;
  for (const auto& tr : gen.sample(n, max_len, seed, temperature)) seqs.push_back(tr.tokens);
  return nearest_neighbours(encoder, seqs, real, vocab);
}

void write_gen_report(const std::filesystem::path& path, std::span<const GenReportRow> rows) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const GenReportRow& r : rows) out << r.generated << '\t' << r.nearest_real << '\t' << r.cosine << '\n';
  write_text(path, out.str());
}

double distinct_ngram_ratio(std::span<const std::string> texts, int n) {
  if (n != 1 && n != 2) throw std::invalid_argument("distinct_ngram_ratio: n must be 1 or 2");
  if (texts.empty()) throw std::invalid_argument("distinct_ngram_ratio: no texts");
  std::set<std::string> unique;
  std::size_t total = 0;
  for (const std::string& text : texts) {
    std::istringstream ss(text);
    std::vector<std::string> toks{std::istream_iterator<std::string>(ss), {}};
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
      unique.insert(n == 1 ? toks[i] : toks[i] + '\x1f' + toks[i + 1]);
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("distinct_ngram_ratio: no n-grams");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

}  // namespace readlab::eval

#pragma once

// Accuracy, label-fraction sweeps, feature export with a 2-D PCA projection,
// the generated-text nearest-neighbour report and distinct-n diversity.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "readlab/classifier.hpp"
#include "readlab/config.hpp"
#include "readlab/corpus.hpp"
#include "readlab/generator.hpp"

namespace readlab::eval {

/// Fraction of inputs whose argmax over the first k classes equals the gold label.
/// Throws std::invalid_argument on an empty or misaligned set.
double accuracy(const classifier::Model& model, std::span<const classifier::ModelInput> inputs,
                std::span<const int> gold);

struct SweepCell {
  Variant variant = Variant::Baseline;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  double final_acc = 0.0;
  double best_acc = 0.0;
  bool failed = false;
  std::string reason;
  std::filesystem::path metrics_path;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // grid order: variant, fraction, seed
};

struct SweepOptions {
  std::optional<std::filesystem::path> outdir;  // sweep.csv, plots and per-cell run dirs
  int jobs = 1;
  /// Called with each cell's config before it runs; throwing marks the cell failed.
  std::function<void(const TrainConfig&)> before_cell;
};

SweepResult sweep(const TrainConfig& base, std::span<const double> fractions,
                  std::span<const Variant> variants, std::span<const std::uint64_t> seeds,
                  const SweepOptions& opts = {});

/// Compact decimal form used in CSV cells and directory names ("0.02", "1").
std::string format_number(double v);
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result);
void write_sweep_failures(const std::filesystem::path& path, const SweepResult& result);
/// Mean final accuracy vs. fraction, one line series per variant present in `variants`.
std::string sweep_svg(const SweepResult& result, std::span<const Variant> variants);

struct Projection {
  Eigen::MatrixXd coords;      // n x 2
  Eigen::VectorXd mean;        // d
  Eigen::MatrixXd components;  // d x 2, orthonormal columns
};

/// Rows of `points` are observations. Requires n >= 1.
Projection pca_2d(const Eigen::MatrixXd& points);

/// Mean silhouette (Euclidean). Points in singleton clusters score 0.
/// Needs at least two distinct labels.
double silhouette_score(const Eigen::MatrixXd& points, std::span<const int> labels);

/// Zero-norm vectors have similarity 0.
double cosine_similarity(const nn::Vec& a, const nn::Vec& b);

/// Encoder features (rows) of the given inputs.
Eigen::MatrixXd feature_matrix(const classifier::Model& model,
                               std::span<const classifier::ModelInput> inputs);

/// Writes `label<TAB>f_1,...,f_d` rows to tsv_path and `label,x,y` to csv_path.
Projection export_features(const Eigen::MatrixXd& features, std::span<const int> labels,
                           std::span<const std::string> label_names,
                           const std::filesystem::path& tsv_path,
                           const std::filesystem::path& csv_path);

struct GenReportRow {
  std::string generated;
  std::string nearest_real;
  double cosine = 0.0;
};

/// Nearest real text (by encoder-feature cosine) for each generated sequence.
/// Throws std::invalid_argument when `real` is empty; ties go to the earliest text.
std::vector<GenReportRow> nearest_neighbours(const classifier::Encoder& encoder,
                                             std::span<const std::vector<int>> generated,
                                             std::span<const corpus::Example> real,
                                             const corpus::Vocabulary& vocab);

/// Samples n sequences from the generator and reports their nearest real texts.
std::vector<GenReportRow> generation_report(const generator::Generator& gen,
                                            const classifier::Encoder& encoder,
                                            std::span<const corpus::Example> real,
                                            const corpus::Vocabulary& vocab, int n, int max_len,
                                            std::uint64_t seed, double temperature = 1.0);

void write_gen_report(const std::filesystem::path& path, std::span<const GenReportRow> rows);

/// Unique n-grams / total n-grams over whitespace tokens. n must be 1 or 2.
/// Throws std::invalid_argument if the texts contain no n-gram at all.
double distinct_ngram_ratio(std::span<const std::string> texts, int n);

}  // namespace readlab::eval

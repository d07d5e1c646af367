#include "readlab/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "readlab/checkpoint.hpp"
#include "readlab/config.hpp"
#include "readlab/eval.hpp"
#include "readlab/gradcheck.hpp"
#include "readlab/trainer.hpp"

namespace readlab::cli {

using nlohmann::json;

namespace {

/// Bad invocation or unusable inputs; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

std::filesystem::path output_root() {
  const char* env = std::getenv("READ_LAB_OUTDIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw UsageError("malformed " + what + " '" + s + "'");
  }
  if (used != s.size()) throw UsageError("malformed " + what + " '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw UsageError("malformed " + what + " '" + s + "'");
  return std::stoull(s);
}

struct TrainArgs {
  std::string config;
  std::string variant;
  std::optional<double> fraction;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::string outdir;
  std::string resume;
};

TrainConfig resolve_config(const std::string& config_path, const json& base_overlay) {
  TrainConfig cfg = merge_json(TrainConfig{}, base_overlay);
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config " + config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + config_path + " is not valid JSON: " + e.what());
    }
    cfg = merge_json(cfg, j);
  }
  return cfg;
}

std::string run_dir_name(const TrainConfig& cfg) {
  return std::string(to_string(cfg.variant)) + "_f" + eval::format_number(cfg.label_fraction) + "_s" +
         std::to_string(cfg.seed);
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  // Precedence: flags > config file > (checkpoint config when resuming) > defaults.
  json overlay = json::object();
  if (!a.resume.empty()) {
    std::ifstream st(std::filesystem::path(a.resume) / "state.json");
    if (!st) throw UsageError("no checkpoint at " + a.resume);
    overlay = json::parse(st).at("config");
  }
  TrainConfig cfg = resolve_config(a.config, overlay);
  if (!a.variant.empty()) cfg.variant = parse_variant(a.variant);
  if (a.fraction) cfg.label_fraction = *a.fraction;
  if (a.seed) cfg.seed = *a.seed;
  if (a.iterations) cfg.outer_iterations = *a.iterations;
  cfg.validate();

  const std::filesystem::path outdir = a.outdir.empty() ? output_root() / run_dir_name(cfg) : std::filesystem::path(a.outdir);
  std::filesystem::create_directories(outdir);

  json manifest;
  manifest["config"] = to_json(cfg);
  manifest["seed"] = cfg.seed;
  manifest["started_at"] = timestamp();

  trainer::PreparedData data;
  try {
    data = trainer::prepare_dataset(cfg);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("dataset: ") + e.what());
  }
  json checksums = json::object();
  for (const auto& [source, sum] : data.checksums) checksums[source] = sum;
  manifest["dataset_checksums"] = checksums;
  data.vocab.save(outdir / "vocab.txt");
  corpus::write_split_manifest(outdir / "split.tsv", data.split);

  trainer::RunOptions ro;
  ro.outdir = outdir;
  if (!a.resume.empty()) ro.resume_from = std::filesystem::path(a.resume);

  auto finish = [&](const std::string& outcome) {
    manifest["finished_at"] = timestamp();
    manifest["outcome"] = outcome;
    checkpoint::write_atomic(outdir / "manifest.json", manifest.dump(2) + "\n");
  };
  manifest["paths"] = {{"outdir", outdir.string()},
                       {"metrics", (outdir / "metrics.jsonl").string()},
                       {"vocab", (outdir / "vocab.txt").string()},
                       {"split", (outdir / "split.tsv").string()}};
  try {
    const trainer::RunResult r = trainer::run(cfg, data, ro);
    if (r.final_checkpoint) manifest["paths"]["checkpoint"] = r.final_checkpoint->string();
    manifest["final_accuracy"] = r.final_accuracy;
    manifest["best_accuracy"] = r.best_accuracy;
    finish("completed");
    out << "final_acc=" << r.final_accuracy << " best_acc=" << r.best_accuracy << " outdir=" << outdir.string()
        << "\n";
  } catch (const std::exception& e) {
    finish(std::string("aborted: ") + e.what());
    throw;
  }
  return kExitOk;
}

struct SweepArgs {
  std::string config;
  std::string fractions;
  std::string variants;
  std::string seeds = "1..5";
  int jobs = 1;
  std::string outdir;
  std::string inject_failure;  // VARIANT:fraction:seed
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const TrainConfig base = resolve_config(a.config, json::object());
  const std::vector<double> fractions = parse_fraction_list(a.fractions);
  std::vector<Variant> variants;
  for (const std::string& v : split(a.variants, ',')) variants.push_back(parse_variant(v));
  const std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds);
  if (fractions.empty() || variants.empty() || seeds.empty()) throw UsageError("empty sweep grid");
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");

  eval::SweepOptions so;
  so.outdir = a.outdir.empty() ? output_root() / "sweep" : std::filesystem::path(a.outdir);
  so.jobs = a.jobs;
  if (!a.inject_failure.empty()) {
    const auto parts = split(a.inject_failure, ':');
    if (parts.size() != 3) throw UsageError("--inject-failure expects VARIANT:fraction:seed");
    const Variant v = parse_variant(parts[0]);
    const double f = parse_double(parts[1], "fraction");
    const std::uint64_t s = parse_u64(parts[2], "seed");
    so.before_cell = [v, f, s](const TrainConfig& c) {
      if (c.variant == v && c.label_fraction == f && c.seed == s) throw std::runtime_error("injected failure");
    };
  }
  const eval::SweepResult r = eval::sweep(base, fractions, variants, seeds, so);
  const auto failed = std::count_if(r.cells.begin(), r.cells.end(), [](const auto& c) { return c.failed; });
  out << "cells=" << r.cells.size() << " failed=" << failed << " csv=" << (*so.outdir / "sweep.csv").string()
      << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::string run;
  std::string kind;
  int n = 50;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  const std::filesystem::path run_dir(a.run);
  std::ifstream mf(run_dir / "manifest.json");
  if (!mf) throw UsageError("no manifest.json in " + a.run);
  const json manifest = json::parse(mf);
  if (!manifest.contains("paths") || !manifest["paths"].contains("checkpoint"))
    throw UsageError("run " + a.run + " has no final checkpoint");
  const std::filesystem::path ckpt = manifest["paths"]["checkpoint"].get<std::string>();
  if (!std::filesystem::exists(ckpt / "state.json")) throw UsageError("missing checkpoint " + ckpt.string());
  if (a.n < 1) throw UsageError("--n must be >= 1");

  const TrainConfig cfg = config_from_json(manifest.at("config"));
  const trainer::PreparedData data = trainer::prepare_dataset(cfg);
  const trainer::RunState state = trainer::load_state(cfg, data, ckpt);

  if (a.kind == "gen") {
    if (!state.gen) throw UsageError("variant " + std::string(to_string(cfg.variant)) + " has no text generator");
    std::vector<corpus::Example> real = data.split.labeled;
    real.insert(real.end(), data.split.unlabeled.begin(), data.split.unlabeled.end());
    const auto rows = eval::generation_report(*state.gen, *state.model->encoder, real, data.vocab, a.n,
                                              cfg.max_len, derive_seed(cfg.seed, "report"), cfg.temperature);
    eval::write_gen_report(run_dir / "gen_report.tsv", rows);
    out << "wrote " << rows.size() << " rows to " << (run_dir / "gen_report.tsv").string() << "\n";
  } else if (a.kind == "features") {
    std::vector<classifier::ModelInput> inputs;
    std::vector<int> labels;
    for (const corpus::Example& ex : data.split.test) {
      inputs.push_back(trainer::model_input(data, ex, true));
      labels.push_back(*ex.label);
    }
    const Eigen::MatrixXd feats = eval::feature_matrix(*state.model, inputs);
    eval::export_features(feats, labels, data.labels.names, run_dir / "features.tsv",
                          run_dir / "features_2d.csv");
    out << "wrote " << feats.rows() << " feature rows to " << (run_dir / "features.tsv").string() << "\n";
  } else {
    throw UsageError("--kind must be gen or features");
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& component, bool corrupt, std::ostream& out) {
  gradcheck::Options opts;
  if (corrupt) {
    opts.corrupt = [](const nn::ParamList& ps) {
      if (!ps.empty() && ps.front()->grad.size() > 0) ps.front()->grad.data()[0] += 0.5;
    };
  }
  std::vector<gradcheck::Report> reports;
  try {
    reports = gradcheck::run(component, opts);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  bool ok = true;
  for (const auto& r : reports) {
    out << r.component << ": worst_rel_error=" << std::scientific << std::setprecision(3) << r.worst_rel_error
        << std::defaultfloat << " at " << r.worst_coordinate << " over " << r.coordinates << " coordinates "
        << (r.passed ? "PASS" : "FAIL") << "\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  const auto dots = s.find("..");
  if (dots != std::string::npos) {
    const std::uint64_t lo = parse_u64(s.substr(0, dots), "seed range");
    const std::uint64_t hi = parse_u64(s.substr(dots + 2), "seed range");
    if (hi < lo) throw UsageError("empty seed range '" + s + "'");
    for (std::uint64_t v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  for (const std::string& item : split(s, ',')) out.push_back(parse_u64(item, "seed"));
  return out;
}

std::vector<double> parse_fraction_list(const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : split(s, ',')) {
    const double f = parse_double(item, "fraction");
    if (!(f > 0.0 && f <= 1.0)) throw UsageError("fraction " + item + " outside (0, 1]");
    out.push_back(f);
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"read_lab: semi-supervised text classification with an IRL text generator"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "train one run");
  train->add_option("--config", ta.config, "JSON config file");
  train->add_option("--variant", ta.variant, "READ | D_READ | GAN_FEATURE | BASELINE");
  train->add_option("--fraction", ta.fraction, "labeled fraction in (0, 1]");
  train->add_option("--seed", ta.seed, "master seed");
  train->add_option("--iterations", ta.iterations, "outer iterations");
  train->add_option("--outdir", ta.outdir, "run directory");
  train->add_option("--resume", ta.resume, "checkpoint directory to resume from");

  SweepArgs sa;
  CLI::App* sweep = app.add_subcommand("sweep", "label-fraction sweep");
  sweep->add_option("--config", sa.config, "JSON config file");
  sweep->add_option("--fractions", sa.fractions, "comma-separated fractions")->required();
  sweep->add_option("--variants", sa.variants, "comma-separated variants")->required();
  sweep->add_option("--seeds", sa.seeds, "seed range a..b or list");
  sweep->add_option("--jobs", sa.jobs, "concurrent cells");
  sweep->add_option("--outdir", sa.outdir, "sweep directory");
  sweep->add_option("--inject-failure", sa.inject_failure)->group("");

  ReportArgs ra;
  CLI::App* report = app.add_subcommand("report", "reports from a finished run");
  report->add_option("--run", ra.run, "run directory")->required();
  report->add_option("--kind", ra.kind, "gen | features")->required();
  report->add_option("--n", ra.n, "generated samples");

  std::string component = "all";
  bool corrupt = false;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--component", component, "generator | reward | classifier | all");
  gc->add_flag("--corrupt-gradient", corrupt)->group("");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(ta, out);
    if (sweep->parsed()) return cmd_sweep(sa, out);
    if (report->parsed()) return cmd_report(ra, out);
    if (gc->parsed()) return cmd_gradcheck(component, corrupt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitAborted;
  }
  return kExitUsage;
}

}  // namespace readlab::cli

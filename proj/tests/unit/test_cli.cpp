#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "readlab/cli.hpp"
#include "test_util.hpp"

using namespace readlab;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) n += !l.empty();
  return n;
}

// Small synthetic-corpus config shared by the CLI tests.
fs::path write_config(const fs::path& dir, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json j{{"synth_train", 60},    {"synth_test", 20},       {"outer_iterations", 4},
                   {"eval_every", 2},      {"batch_size", 4},        {"max_len", 8},
                   {"pretrain_epochs", 1}, {"gen_embed_dim", 8},     {"gen_state_dim", 8},
                   {"gen_ff_dim", 8},      {"gen_ff_layers", 1},     {"reward_embed_dim", 8},
                   {"reward_hidden_dim", 8}, {"reward_hidden_layers", 1}, {"d", 8},
                   {"enc_embed_dim", 8},   {"enc_hidden_dim", 8},    {"noise_dim", 4}};
  j.update(extra);
  const fs::path p = dir / "c.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST(Cli, TrainHappyPathWritesManifest) {
  const auto dir = temp_dir("cli_train");
  const auto cfg = write_config(dir);
  const Result r = invoke({"train", "--config", cfg.string(), "--variant", "BASELINE", "--fraction", "1.0",
                        "--outdir", (dir / "run").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  ASSERT_TRUE(fs::exists(dir / "run" / "manifest.json"));
  const auto m = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
  EXPECT_EQ(m["config"]["variant"], "BASELINE");
  EXPECT_EQ(m["config"]["label_fraction"], 1.0);
  EXPECT_EQ(m["config"]["lr_G"], 0.005);  // defaults materialized
  EXPECT_EQ(m["outcome"], "completed");
  EXPECT_TRUE(m.contains("dataset_checksums"));
  EXPECT_TRUE(m.contains("started_at") && m.contains("finished_at"));
  EXPECT_EQ(line_count(dir / "run" / "metrics.jsonl"), 4u);
  EXPECT_TRUE(fs::exists(dir / "run" / "vocab.txt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "split.tsv"));
}

TEST(Cli, ManifestConfigReproducesTheRun) {
  const auto dir = temp_dir("cli_manifest");
  const auto cfg = write_config(dir);
  ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--variant", "READ", "--outdir", (dir / "a").string()}).code, 0);
  const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  std::ofstream(dir / "resolved.json") << m["config"].dump();
  ASSERT_EQ(invoke({"train", "--config", (dir / "resolved.json").string(), "--outdir", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "metrics.jsonl"), slurp(dir / "b" / "metrics.jsonl"));
}

TEST(Cli, UnknownVariantListsValidNames) {
  const auto dir = temp_dir("cli_bogus");
  const Result r = invoke({"train", "--config", write_config(dir).string(), "--variant", "BOGUS"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("READ, D_READ, GAN_FEATURE, BASELINE"), std::string::npos) << r.err;
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = temp_dir("cli_cfg");
  EXPECT_EQ(invoke({"train", "--config", write_config(dir, {{"no_such_key", 1}}).string()}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"train", "--config", (dir / "missing.json").string()}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"train", "--config", write_config(dir).string(), "--fraction", "0"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({}).code, cli::kExitUsage);
}

TEST(Cli, TrainingAbortExitsThree) {
  const auto dir = temp_dir("cli_abort");
  const auto cfg = write_config(dir, {{"lr_MC", 1e300}});
  const Result r = invoke({"train", "--config", cfg.string(), "--variant", "BASELINE", "--outdir", (dir / "run").string()});
  EXPECT_EQ(r.code, cli::kExitAborted) << r.err;
}

TEST(Cli, IdenticalInvocationsAreByteIdentical) {
  const auto dir = temp_dir("cli_det");
  const auto cfg = write_config(dir);
  for (const char* sub : {"a", "b"})
    ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--variant", "READ", "--seed", "4", "--outdir",
                   (dir / sub).string()}).code,
              0);
  EXPECT_EQ(slurp(dir / "a" / "metrics.jsonl"), slurp(dir / "b" / "metrics.jsonl"));
}

TEST(Cli, FlagsOverrideConfigFileOverridesDefaults) {
  const auto dir = temp_dir("cli_prec");
  const auto cfg = write_config(dir, {{"seed", 11}, {"label_fraction", 0.5}, {"variant", "GAN_FEATURE"}});
  ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--seed", "12", "--outdir", (dir / "run").string()}).code, 0);
  const auto m = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
  EXPECT_EQ(m["config"]["seed"], 12);               // flag
  EXPECT_EQ(m["config"]["label_fraction"], 0.5);    // file
  EXPECT_EQ(m["config"]["variant"], "GAN_FEATURE"); // file
  EXPECT_EQ(m["config"]["lr_R"], 0.004);            // default
}

TEST(Cli, DefaultOutdirComesFromEnvironment) {
  const auto dir = temp_dir("cli_env");
  const auto cfg = write_config(dir);
  ::setenv("READ_LAB_OUTDIR", (dir / "root").string().c_str(), 1);
  const Result r = invoke({"train", "--config", cfg.string(), "--variant", "BASELINE", "--fraction", "0.5", "--seed", "2"});
  ::unsetenv("READ_LAB_OUTDIR");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "root" / "BASELINE_f0.5_s2" / "metrics.jsonl"));
}

TEST(Cli, ResumeContinuesFromCheckpoint) {
  const auto dir = temp_dir("cli_resume");
  const auto cfg = write_config(dir, {{"checkpoint_every", 2}});
  ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--variant", "D_READ", "--outdir", (dir / "full").string()}).code, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--variant", "D_READ", "--iterations", "2", "--outdir",
                 (dir / "cut").string()}).code,
            0);
  ASSERT_TRUE(fs::exists(dir / "cut" / "ckpt-2"));
  const Result r = invoke({"train", "--config", cfg.string(), "--variant", "D_READ", "--outdir", (dir / "cut").string(),
                        "--resume", (dir / "cut" / "ckpt-2").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "full" / "metrics.jsonl"), slurp(dir / "cut" / "metrics.jsonl"));
}

TEST(Cli, SweepWritesCsvAndToleratesCellFailure) {
  const auto dir = temp_dir("cli_sweep");
  const auto cfg = write_config(dir);
  const Result r = invoke({"sweep", "--config", cfg.string(), "--fractions", "0.5,1.0", "--variants", "BASELINE",
                        "--seeds", "1..2", "--outdir", (dir / "sw").string(), "--inject-failure",
                        "BASELINE:1:2"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(line_count(dir / "sw" / "sweep.csv"), 1u + 3u);
  const std::string failures = slurp(dir / "sw" / "sweep_failures.csv");
  EXPECT_NE(failures.find("BASELINE,1,2,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "sw" / "sweep_BASELINE.svg"));
}

TEST(Cli, SweepRejectsMalformedGrids) {
  const auto dir = temp_dir("cli_sweep_bad");
  const auto cfg = write_config(dir).string();
  const auto out = (dir / "sw").string();
  EXPECT_EQ(invoke({"sweep", "--config", cfg, "--fractions", "0.1,abc", "--variants", "BASELINE", "--outdir", out}).code,
            cli::kExitUsage);
  EXPECT_EQ(invoke({"sweep", "--config", cfg, "--fractions", "0.1,1.5", "--variants", "BASELINE", "--outdir", out}).code,
            cli::kExitUsage);
  EXPECT_EQ(invoke({"sweep", "--config", cfg, "--fractions", "", "--variants", "BASELINE", "--outdir", out}).code,
            cli::kExitUsage);
  EXPECT_EQ(invoke({"sweep", "--config", cfg, "--fractions", "0.5", "--variants", "NOPE", "--outdir", out}).code,
            cli::kExitUsage);
  EXPECT_EQ(invoke({"sweep", "--config", cfg, "--fractions", "0.5", "--variants", "BASELINE", "--seeds", "5..1",
                 "--outdir", out}).code,
            cli::kExitUsage);
}

TEST(Cli, SeedAndFractionParsing) {
  EXPECT_EQ(cli::parse_seed_list("1..5"), (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(cli::parse_seed_list("3,9"), (std::vector<std::uint64_t>{3, 9}));
  EXPECT_EQ(cli::parse_fraction_list("0.01,1"), (std::vector<double>{0.01, 1.0}));
  EXPECT_ANY_THROW(cli::parse_fraction_list("0"));
  EXPECT_ANY_THROW(cli::parse_seed_list("x"));
}

TEST(Cli, ReportsAreIdempotent) {
  const auto dir = temp_dir("cli_report");
  const auto cfg = write_config(dir);
  const auto run = (dir / "run").string();
  ASSERT_EQ(invoke({"train", "--config", cfg.string(), "--variant", "READ", "--outdir", run}).code, 0);

  ASSERT_EQ(invoke({"report", "--run", run, "--kind", "gen", "--n", "7"}).code, 0);
  const std::string first = slurp(dir / "run" / "gen_report.tsv");
  EXPECT_EQ(line_count(dir / "run" / "gen_report.tsv"), 7u);
  ASSERT_EQ(invoke({"report", "--run", run, "--kind", "gen", "--n", "7"}).code, 0);
  EXPECT_EQ(slurp(dir / "run" / "gen_report.tsv"), first);

  ASSERT_EQ(invoke({"report", "--run", run, "--kind", "features"}).code, 0);
  const std::string feats = slurp(dir / "run" / "features.tsv");
  std::istringstream rows(feats);
  std::string row;
  std::size_t n = 0;
  while (std::getline(rows, row)) {
    const auto tab = row.find('\t');
    ASSERT_NE(tab, std::string::npos);
    EXPECT_EQ(std::count(row.begin() + static_cast<long>(tab), row.end(), ',') + 2, 8 + 1);
    ++n;
  }
  EXPECT_EQ(n, 20u);
  ASSERT_EQ(invoke({"report", "--run", run, "--kind", "features"}).code, 0);
  EXPECT_EQ(slurp(dir / "run" / "features.tsv"), feats);
  EXPECT_TRUE(fs::exists(dir / "run" / "features_2d.csv"));
}

TEST(Cli, ReportWithoutCheckpointExitsTwo) {
  const auto dir = temp_dir("cli_report_missing");
  EXPECT_EQ(invoke({"report", "--run", dir.string(), "--kind", "gen"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"report", "--run", dir.string(), "--kind", "pictures"}).code, cli::kExitUsage);
}

TEST(Cli, GradcheckScopesAndNegativeControl) {
  Result r = invoke({"gradcheck"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.out << r.err;
  EXPECT_NE(r.out.find("generator"), std::string::npos);
  EXPECT_NE(r.out.find("classifier"), std::string::npos);

  r = invoke({"gradcheck", "--component", "reward"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("reward"), std::string::npos);
  EXPECT_EQ(r.out.find("generator"), std::string::npos);

  EXPECT_EQ(invoke({"gradcheck", "--component", "reward", "--corrupt-gradient"}).code, cli::kExitCheckFailed);
  EXPECT_EQ(invoke({"gradcheck", "--component", "everything"}).code, cli::kExitUsage);
}

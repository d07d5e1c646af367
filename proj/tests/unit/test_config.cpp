#include <gtest/gtest.h>

#include <fstream>

#include "readlab/checkpoint.hpp"
#include "readlab/config.hpp"
#include "test_util.hpp"

using namespace readlab;
using nlohmann::json;

TEST(Config, DefaultsFollowPublishedOptimizerSettings) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(c.lr_G, 0.005);
  EXPECT_DOUBLE_EQ(c.lr_R, 0.004);
  EXPECT_DOUBLE_EQ(c.lr_MC, 5e-5);
  EXPECT_DOUBLE_EQ(c.weight_decay, 0.01);
  EXPECT_EQ(c.max_len, 64);
  EXPECT_EQ(c.batch_size, 32);
  EXPECT_EQ(c.eval_every, 50);
  EXPECT_EQ(c.outer_iterations, 2000);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  TrainConfig c;
  c.variant = Variant::GanFeature;
  c.seed = 42;
  c.label_fraction = 0.1;
  c.feature_file = "f.tsv";
  const TrainConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(Config, UnknownKeyIsRejected) {
  EXPECT_THROW(config_from_json(json{{"lr_g", 0.1}}), ConfigError);
  EXPECT_THROW(config_from_json(json::array()), ConfigError);
  EXPECT_THROW(config_from_json(json{{"max_len", "long"}}), ConfigError);
}

TEST(Config, MergeOverlaysOnlyPresentKeys) {
  TrainConfig base;
  base.seed = 9;
  base.max_len = 20;
  const TrainConfig m = merge_json(base, json{{"max_len", 30}, {"variant", "D_READ"}});
  EXPECT_EQ(m.seed, 9u);
  EXPECT_EQ(m.max_len, 30);
  EXPECT_EQ(m.variant, Variant::DRead);
}

TEST(Config, RangeChecks) {
  for (const json& bad : {json{{"label_fraction", 0.0}}, json{{"label_fraction", 1.5}},
                          json{{"batch_size", 0}}, json{{"entropy_weight", -0.1}},
                          json{{"lr_G", -1.0}}, json{{"max_len", 0}}}) {
    EXPECT_THROW(config_from_json(bad).validate(), ConfigError) << bad.dump();
  }
}

TEST(Config, VariantNames) {
  EXPECT_EQ(parse_variant("READ"), Variant::Read);
  EXPECT_EQ(parse_variant("D-READ"), Variant::DRead);
  EXPECT_EQ(parse_variant("GAN_FEATURE"), Variant::GanFeature);
  EXPECT_EQ(parse_variant("BASELINE"), Variant::Baseline);
  EXPECT_THROW(parse_variant("BOGUS"), ConfigError);
  for (Variant v : {Variant::Read, Variant::DRead, Variant::GanFeature, Variant::Baseline})
    EXPECT_EQ(parse_variant(to_string(v)), v);
}

TEST(Config, LoadFromFile) {
  const auto dir = temp_dir("config");
  std::ofstream(dir / "ok.json") << R"({"seed": 3, "outer_iterations": 10})";
  std::ofstream(dir / "bad.json") << "{seed: 3";
  EXPECT_EQ(load_config((dir / "ok.json").string()).outer_iterations, 10);
  EXPECT_THROW(load_config((dir / "bad.json").string()), ConfigError);
  EXPECT_THROW(load_config((dir / "none.json").string()), ConfigError);
}

TEST(Checkpoint, TensorsRoundTripExactly) {
  const auto dir = temp_dir("ckpt");
  nn::Param a("a", 2, 3), b("b", 4, 1);
  Rng rng(1);
  nn::init_uniform(a, 1.0, rng);
  nn::init_uniform(b, 1.0, rng);
  checkpoint::save_tensors(dir, checkpoint::snapshot({&a, &b}, "m."));
  nn::Param a2("a", 2, 3), b2("b", 4, 1);
  checkpoint::restore({&a2, &b2}, checkpoint::load_tensors(dir), "m.");
  EXPECT_TRUE(a.value == a2.value);
  EXPECT_TRUE(b.value == b2.value);

  nn::Param wrong("a", 3, 2);
  EXPECT_THROW(checkpoint::restore({&wrong}, checkpoint::load_tensors(dir), "m."), std::runtime_error);
  nn::Param missing("c", 1, 1);
  EXPECT_THROW(checkpoint::restore({&missing}, checkpoint::load_tensors(dir), "m."), std::runtime_error);
}

TEST(Checkpoint, CorruptPayloadIsDetected) {
  const auto dir = temp_dir("ckpt_bad");
  nn::Param a("a", 2, 2);
  a.value.setConstant(1.5);
  checkpoint::save_tensors(dir, checkpoint::snapshot({&a}));
  {
    std::fstream f(dir / "tensors.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(3);
    f.put('\x7f');
  }
  EXPECT_THROW(checkpoint::load_tensors(dir), std::runtime_error);
  EXPECT_THROW(checkpoint::load_tensors(dir / "nope"), std::runtime_error);
}

TEST(Checkpoint, AtomicWriteReplacesContent) {
  const auto dir = temp_dir("atomic");
  checkpoint::write_atomic(dir / "x.json", "one");
  checkpoint::write_atomic(dir / "x.json", "two");
  EXPECT_EQ(slurp(dir / "x.json"), "two");
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir), std::filesystem::directory_iterator()), 1);
}

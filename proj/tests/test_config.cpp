#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "evac/config.hpp"

using namespace evac;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  const RunConfig cfg = parse_config("");
  EXPECT_EQ(cfg.env.num_individuals, 60);
  EXPECT_EQ(cfg.env.max_steps, 2000);
  EXPECT_EQ(cfg.train.learning_rate, 5e-4);
  EXPECT_EQ(cfg.train.rpo_alpha, 0.5);
  EXPECT_EQ(cfg.encoder.kind, EncoderKind::Gravity);
  EXPECT_EQ(cfg.encoder.alpha, 1.0);
  EXPECT_EQ(cfg.eval.n_runs, 200);
  EXPECT_EQ(cfg.eval.grid_res, 21);
  EXPECT_EQ(cfg.eval.ema_smoothing, 0.99);
  EXPECT_EQ(cfg.seed, 1u);
  EXPECT_EQ(cfg.workers, 1);
}

TEST(Config, SectionsOverrideDefaults) {
  const RunConfig cfg = parse_config(R"(
env:
  num_individuals: 10
  max_steps: 500
  exit_point: [0.0, 1.0]
train:
  total_timesteps: 1e6
  target_kl: 0.02
  anneal_lr: false
encoder:
  kind: ff
seed: 9
)");
  EXPECT_EQ(cfg.env.num_individuals, 10);
  EXPECT_EQ(cfg.env.max_steps, 500);
  EXPECT_EQ(cfg.env.exit_point, (Vec2{0.0, 1.0}));
  EXPECT_EQ(cfg.train.total_timesteps, 1000000);
  ASSERT_TRUE(cfg.train.target_kl.has_value());
  EXPECT_EQ(*cfg.train.target_kl, 0.02);
  EXPECT_FALSE(cfg.train.anneal_lr);
  EXPECT_EQ(cfg.encoder.kind, EncoderKind::FeedForward);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.train.gamma, 0.99);
}

TEST(Config, UnknownKeyNamesKeyAndSection) {
  const std::string msg = error_of("train:\n  learnin_rate: 0.1\n");
  EXPECT_NE(msg.find("learnin_rate"), std::string::npos) << msg;
  EXPECT_NE(msg.find("train"), std::string::npos) << msg;
  const std::string top = error_of("trian:\n  gamma: 0.9\n");
  EXPECT_NE(top.find("trian"), std::string::npos) << top;
}

TEST(Config, TypeAndRangeErrorsNameTheKey) {
  const std::string bad_type = error_of("env:\n  num_individuals: many\n");
  EXPECT_NE(bad_type.find("env.num_individuals"), std::string::npos) << bad_type;
  const std::string fractional = error_of("env:\n  num_individuals: 2.5\n");
  EXPECT_NE(fractional.find("num_individuals"), std::string::npos) << fractional;
  EXPECT_THROW(parse_config("encoder:\n  kind: transformer\n"), ConfigError);
  EXPECT_THROW(parse_config("env:\n  enslaving: 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("train:\n  num_minibatches: 7\n"), ConfigError);
  EXPECT_THROW(parse_config("eval:\n  grid_res: 1\n"), ConfigError);
  EXPECT_THROW(parse_config("- just\n- a list\n"), ConfigError);
}

TEST(Config, YamlRoundTripIsExact) {
  RunConfig cfg;
  cfg.env.noise = 0.1 + 0.2;  // not representable in short decimal form
  cfg.train.learning_rate = 3.0e-4 / 7.0;
  cfg.train.target_kl = 0.015;
  cfg.encoder.alpha = 2.5;
  cfg.io.run_name = "demo";
  cfg.seed = 123456789012345ULL;
  const RunConfig back = parse_config(to_yaml(cfg));
  EXPECT_EQ(to_yaml(back), to_yaml(cfg));
  EXPECT_EQ(back.env.noise, cfg.env.noise);
  EXPECT_EQ(back.train.learning_rate, cfg.train.learning_rate);
  EXPECT_EQ(back.train.target_kl, cfg.train.target_kl);
  EXPECT_EQ(back.seed, cfg.seed);
}

TEST(Config, ManifestReloadsAsConfig) {
  const fs::path dir = fs::temp_directory_path() / "evac_config_manifest";
  fs::remove_all(dir);
  RunConfig cfg;
  cfg.env.num_individuals = 12;
  cfg.encoder.alpha = 3.0;
  write_manifest(dir, cfg, "train --n 12");
  const RunConfig back = load_config(dir / "manifest.yaml");
  EXPECT_EQ(to_yaml(back), to_yaml(cfg));
  fs::remove_all(dir);
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_config("/no/such/run.yaml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/no/such/run.yaml"), std::string::npos);
  }
}

TEST(Config, ShippedExampleLoads) {
  const fs::path dir = fs::path(EVAC_SOURCE_DIR) / "configs";
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".yaml") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    ++seen;
  }
  EXPECT_GT(seen, 0);
}

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tale/config.hpp"

using namespace tale;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults cover the full schedule") {
  RunConfig cfg;
  TrainConfig tc = cfg.train_config();
  CHECK(tc.pretrain_epochs == 10);
  CHECK(tc.pretrain_lr == 1e-4);
  CHECK(tc.batch_size == 16);
  CHECK(tc.finetune_epochs == 5);
  CHECK(tc.finetune_lr_pretrained == 1e-5);
  CHECK(tc.finetune_lr_new == 1e-4);
  CHECK(tc.adam_beta1 == 0.9);
  CHECK(tc.adam_beta2 == 0.999);
  CHECK(tc.adam_eps == 1e-8);
  ModelConfig mc = cfg.model_config();
  CHECK(mc.d == 64);
  CHECK(mc.window == 1024);
  CHECK(mc.time_weight.variant == WeightVariant::polynomial);
  CHECK(mc.time_weight.order == 5);
  CHECK(mc.loss.focal_alpha == 0.25);
  CHECK(mc.loss.focal_gamma == 2.0);
  CHECK(mc.loss.smooth_pos == 0.95);
  CHECK(mc.loss.smooth_neg == 0.05);
}

TEST_CASE("file values and comments parse; overrides win") {
  auto path = tmp_path("tale_cfg.txt");
  {
    std::ofstream out(path);
    out << "# comment\n\nmodel.d = 16\ntime_weight.variant = mlp\ntrain.pretrain_lr = 0.001\n";
  }
  RunConfig cfg = RunConfig::from_file(path);
  CHECK(cfg.model_config().d == 16);
  CHECK(cfg.model_config().time_weight.variant == WeightVariant::mlp);
  CHECK(cfg.train_config().pretrain_lr == 0.001);
  cfg.set("model.d", "32");
  CHECK(cfg.model_config().d == 32);
}

TEST_CASE("unknown keys and bad values are rejected") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("model.bogus", "1"), ConfigError);
  cfg.set("model.d", "not_a_number");
  CHECK_THROWS_AS(cfg.model_config(), ConfigError);

  auto path = tmp_path("tale_cfg_bad.txt");
  {
    std::ofstream out(path);
    out << "mystery.key = 3\n";
  }
  CHECK_THROWS_AS(RunConfig::from_file(path), ConfigError);

  auto path2 = tmp_path("tale_cfg_syntax.txt");
  {
    std::ofstream out(path2);
    out << "model.d 16\n";
  }
  CHECK_THROWS_AS(RunConfig::from_file(path2), ParseError);
}

TEST_CASE("validation catches out-of-range schedule values") {
  RunConfig cfg;
  cfg.set("train.pretrain_lr", "0");
  CHECK_THROWS_AS(cfg.train_config(), ConfigError);
  RunConfig cfg2;
  cfg2.set("train.pretrain_epochs", "0");
  CHECK_THROWS_AS(cfg2.train_config(), ConfigError);
}

TEST_SUITE_END();

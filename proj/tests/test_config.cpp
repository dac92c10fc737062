#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "etnet/config.hpp"

using namespace etnet;
using cfg::ConfigError;
using cfg::RunConfig;

TEST_CASE("defaults survive an empty config") {
  auto c = cfg::parse_config("{}");
  CHECK(c.schedule.base_lr == 0.005);
  CHECK(c.schedule.power == 0.9);
  CHECK(c.optimizer.beta1 == 0.9);
  CHECK(c.optimizer.weight_decay == 0.0005);
  CHECK(c.loss_weights.alpha == 0.3);
  CHECK(c.augment.scale_min == 0.5);
  CHECK(c.augment.scale_max == 2.0);
  CHECK(c.augment.rot_min_deg == -10.0);
  CHECK(c.augment.rot_max_deg == 10.0);
  CHECK(c.augment.color_jitter_prob == 0.5);
  CHECK(c.variant == "full");
}

TEST_CASE("unknown keys are named in the error") {
  try {
    cfg::parse_config(R"({"schedule": {"lr": 1.0}})");
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("schedule.lr") != std::string::npos);
  }
  CHECK_THROWS_AS(cfg::parse_config(R"({"training": {}})"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("not json"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config(R"({"network": {"block_widths": [1, 2]}})"), ConfigError);
}

TEST_CASE("round trip through json keeps every field") {
  auto c = cfg::parse_config("{}");
  c.network.stem_width = 12;
  c.network.fusion = net::Fusion::Add;
  c.schedule.epochs = 77;
  c.seed = 12345;
  c.train_root = "/data/x";
  auto c2 = cfg::parse_config(cfg::to_json(c));
  CHECK(c2.network.stem_width == 12);
  CHECK(c2.network.fusion == net::Fusion::Add);
  CHECK(c2.schedule.epochs == 77);
  CHECK(c2.seed == 12345);
  CHECK(c2.train_root == "/data/x");
  CHECK(cfg::config_hash(c) == cfg::config_hash(c2));
}

TEST_CASE("overrides hit existing keys and reject unknown ones") {
  auto c = cfg::parse_config("{}");
  cfg::apply_override(c, "schedule.epochs=123");
  CHECK(c.schedule.epochs == 123);
  cfg::apply_override(c, "run.variant=wam");
  CHECK(c.variant == "wam");
  cfg::apply_override(c, "data.train_root=/tmp/somewhere");
  CHECK(c.train_root == "/tmp/somewhere");
  cfg::apply_override(c, "network.block_widths=[8,16,32,64]");
  CHECK(c.network.block_widths == std::array<int, 4>{8, 16, 32, 64});

  CHECK_THROWS_AS(cfg::apply_override(c, "schedule.nope=1"), ConfigError);
  CHECK_THROWS_AS(cfg::apply_override(c, "nonsense"), ConfigError);
  CHECK_THROWS_AS(cfg::apply_override(c, "schedule.epochs=\"many\""), ConfigError);
}

TEST_CASE("config hash tracks content") {
  auto a = cfg::parse_config("{}");
  auto b = cfg::parse_config("{}");
  CHECK(cfg::config_hash(a) == cfg::config_hash(b));
  b.seed = 999;
  CHECK(cfg::config_hash(a) != cfg::config_hash(b));
}

TEST_CASE("network config json round trip") {
  net::NetworkConfig n;
  n.num_classes = 5;
  n.use_egm = false;
  n.dilation_stage4 = 4;
  auto n2 = cfg::network_config_from_json(cfg::network_config_json(n));
  CHECK(n2.num_classes == 5);
  CHECK(!n2.use_egm);
  CHECK(n2.dilation_stage4 == 4);
  CHECK(cfg::network_config_hash(n) == cfg::network_config_hash(n2));
}

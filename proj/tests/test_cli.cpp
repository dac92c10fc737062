#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(ETNET_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 256> buf;
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch() {
  const fs::path p = fs::temp_directory_path() / "etnet_cli_test";
  return p;
}

std::string slurp_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_config(const fs::path& path, const fs::path& data_root, const fs::path& out_dir) {
  std::ofstream f(path);
  f << R"({
  "network": {"stem_width": 4, "block_widths": [8,16,32,64], "blocks_per_stage": [1,1,1,1],
              "decoder_channels": 8, "edge_channels": 8, "attention_reduction": 4},
  "augment": {"enabled": false},
  "schedule": {"epochs": 2, "batch_size": 2},
  "data": {"train_root": ")" << data_root.string() << R"(", "classes": 3},
  "run": {"variant": "full", "out_dir": ")" << out_dir.string() << R"(", "seed": 5, "eval_every": 2}
})";
}

}  // namespace

TEST_CASE("cli end to end: gen-data, train, eval, predict") {
  const fs::path root = scratch();
  fs::remove_all(root);
  fs::create_directories(root);

  auto gen = run_cli("gen-data --n 4 --size 48 --classes 3 --seed 3 --out " +
                     (root / "ds").string());
  CHECK(gen.exit_code == 0);
  CHECK(fs::exists(root / "ds" / "manifest.json"));
  CHECK(fs::exists(root / "ds" / "images" / "sample_0.png"));

  write_config(root / "run.json", root / "ds", root / "run");
  auto train = run_cli("train --config " + (root / "run.json").string());
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(root / "run" / "history.csv"));
  CHECK(fs::exists(root / "run" / "config.snapshot"));
  CHECK(fs::exists(root / "run" / "checkpoints" / "best"));
  CHECK(fs::exists(root / "run" / "checkpoints" / "last"));
  CHECK(fs::exists(root / "run" / "predictions"));

  auto eval = run_cli("eval --checkpoint " + (root / "run" / "checkpoints" / "last").string() +
                      " --data " + (root / "ds").string() + " --out " + (root / "eval").string());
  CHECK(eval.exit_code == 0);
  CHECK(eval.output.find("miou:") != std::string::npos);
  CHECK(fs::exists(root / "eval" / "metrics.txt"));

  auto pred = run_cli("predict --checkpoint " +
                      (root / "run" / "checkpoints" / "last").string() + " --image " +
                      (root / "ds" / "images" / "sample_1.png").string() + " --out " +
                      (root / "pred").string());
  CHECK(pred.exit_code == 0);
  CHECK(fs::exists(root / "pred" / "sample_1_mask.png"));
  CHECK(fs::exists(root / "pred" / "sample_1_overlay.png"));
}

TEST_CASE("cli error paths use exit code 2 with diagnostics") {
  const fs::path root = scratch();
  fs::create_directories(root);

  auto unknown = run_cli("transmogrify");
  CHECK(unknown.exit_code != 0);
  CHECK(unknown.output.find("--help") != std::string::npos);

  std::ofstream(root / "bad.json") << R"({"schedule": {"leaning_rate": 1}})";
  auto bad_key = run_cli("train --config " + (root / "bad.json").string());
  CHECK(bad_key.exit_code == 2);
  CHECK(bad_key.output.find("schedule.leaning_rate") != std::string::npos);

  auto missing = run_cli("train --config " + (root / "no_such.json").string());
  CHECK(missing.exit_code == 2);

  auto bad_set = run_cli("train --config " + (root / "bad.json").string() +
                         " --set run.wrong=1");
  CHECK(bad_set.exit_code == 2);

  auto missing_ckpt = run_cli("eval --checkpoint " + (root / "nope").string() + " --data " +
                              (root / "nope_data").string());
  CHECK(missing_ckpt.exit_code == 2);
}

TEST_CASE("replaying a config snapshot reproduces the run without touching inputs") {
  const fs::path root = scratch() / "replay";
  fs::remove_all(root);
  fs::create_directories(root);

  auto gen = run_cli("gen-data --n 4 --size 48 --classes 3 --seed 9 --out " +
                     (root / "ds").string());
  REQUIRE(gen.exit_code == 0);
  const std::string mask_before = slurp_file(root / "ds" / "masks" / "sample_0.png");

  write_config(root / "run.json", root / "ds", root / "runA");
  REQUIRE(run_cli("train --config " + (root / "run.json").string()).exit_code == 0);

  // replay from the resolved snapshot into a second directory
  REQUIRE(run_cli("train --config " + (root / "runA" / "config.snapshot").string() +
                  " --set run.out_dir=" + (root / "runB").string())
              .exit_code == 0);
  CHECK(slurp_file(root / "runA" / "history.csv") == slurp_file(root / "runB" / "history.csv"));

  // the dataset itself was never modified
  CHECK(slurp_file(root / "ds" / "masks" / "sample_0.png") == mask_before);
}

TEST_CASE("cli overrides reach the run config") {
  const fs::path root = scratch() / "ovr";
  fs::remove_all(root);
  fs::create_directories(root);

  auto gen = run_cli("gen-data --n 2 --size 48 --classes 3 --seed 4 --out " +
                     (root / "ds").string());
  REQUIRE(gen.exit_code == 0);
  write_config(root / "run.json", root / "ds", root / "run");
  auto r = run_cli("train --config " + (root / "run.json").string() +
                   " --set schedule.epochs=0 --set run.out_dir=" + (root / "ovr_out").string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(root / "ovr_out" / "checkpoints" / "last"));

  // snapshot reflects the overrides
  std::ifstream snap(root / "ovr_out" / "config.snapshot");
  std::stringstream ss;
  ss << snap.rdbuf();
  CHECK(ss.str().find("\"epochs\": 0") != std::string::npos);
}

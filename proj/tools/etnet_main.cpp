#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "etnet/checkpoint.hpp"
#include "etnet/config.hpp"
#include "etnet/data.hpp"
#include "etnet/image_io.hpp"
#include "etnet/training.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;  // bad config key, missing file

etnet::cfg::RunConfig load_with_overrides(const std::string& config_path,
                                          const std::vector<std::string>& overrides) {
  etnet::cfg::RunConfig cfg;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) {
      throw etnet::cfg::ConfigError("config file not found: '" + config_path + "'");
    }
    cfg = etnet::cfg::load_config(config_path);
  }
  for (const auto& o : overrides) etnet::cfg::apply_override(cfg, o);
  return cfg;
}

int cmd_gen_data(int n, int size, int classes, std::uint64_t seed, const std::string& out) {
  auto samples = etnet::data::generate_synthetic(n, size, classes, seed);
  etnet::data::write_dataset(out, samples);
  etnet::data::write_manifest(out, n, size, classes, seed);
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  const auto cfg = load_with_overrides(config_path, overrides);
  const auto result = etnet::train::fit(cfg);
  std::cout << result.final_report.to_text();
  std::cout << "checkpoints: " << result.best_checkpoint << " " << result.last_checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_root,
             const std::string& out, bool per_image, bool write_predictions) {
  if (!fs::exists(checkpoint)) {
    throw etnet::cfg::ConfigError("checkpoint not found: '" + checkpoint + "'");
  }
  if (!fs::exists(data_root)) {
    throw etnet::cfg::ConfigError("dataset not found: '" + data_root + "'");
  }
  const auto loaded = etnet::ckpt::load(checkpoint);
  auto net = etnet::ckpt::restore(loaded);
  const auto dataset = etnet::data::load_dataset(data_root, net.config().num_classes);

  etnet::train::EvalOptions opts;
  opts.per_image = per_image;
  fs::path report_path;
  if (!out.empty()) {
    fs::create_directories(out);
    report_path = fs::path(out) / "metrics.txt";
    if (write_predictions) opts.predictions_dir = fs::path(out) / "predictions";
  }
  const auto report = etnet::train::evaluate(
      net, dataset, etnet::cfg::network_config_hash(net.config()), opts);
  std::cout << report.to_text();
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    f << report.to_text();
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path,
                const std::string& out) {
  if (!fs::exists(checkpoint)) {
    throw etnet::cfg::ConfigError("checkpoint not found: '" + checkpoint + "'");
  }
  if (!fs::exists(image_path)) {
    throw etnet::cfg::ConfigError("image not found: '" + image_path + "'");
  }
  const auto loaded = etnet::ckpt::load(checkpoint);
  auto net = etnet::ckpt::restore(loaded);

  const auto png = etnet::data::read_png(image_path);
  if (png.channels != 3) throw std::runtime_error("predict expects an RGB image");
  etnet::data::Sample sample;
  sample.id = fs::path(image_path).stem().string();
  sample.image.h = png.h;
  sample.image.w = png.w;
  sample.image.rgb.resize(png.pixels.size());
  for (std::size_t i = 0; i < png.pixels.size(); ++i) sample.image.rgb[i] = png.pixels[i] / 255.0;
  sample.mask.h = png.h;
  sample.mask.w = png.w;
  sample.mask.v.assign(static_cast<std::size_t>(png.h) * png.w, 0);
  sample.edge = sample.mask;

  // run through the shared evaluation path purely for its prediction images
  etnet::train::EvalOptions opts;
  opts.predictions_dir = fs::path(out);
  (void)etnet::train::evaluate(net, {sample},
                               etnet::cfg::network_config_hash(net.config()), opts);
  std::cout << "wrote prediction images for '" << sample.id << "' to " << out << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides) {
  const auto base_cfg = load_with_overrides(config_path, overrides);
  const fs::path out_root(base_cfg.out_dir);
  fs::create_directories(out_root);

  struct Row {
    std::string name;
    etnet::metrics::MetricReport report;
  };
  std::vector<Row> rows;
  for (const std::string variant : {"base", "egm", "wam", "full"}) {
    auto cfg = base_cfg;
    cfg.variant = variant;
    cfg.out_dir = (out_root / variant).string();
    std::cout << "== training variant " << variant << " ==\n";
    const auto result = etnet::train::fit(cfg);
    rows.push_back({variant, result.final_report});
  }

  std::string table = "variant";
  const int classes = rows[0].report.classes;
  char buf[64];
  for (int c = 1; c < classes; ++c) {
    std::snprintf(buf, sizeof buf, "  dice_c%d", c);
    table += buf;
  }
  table += "     mIoU      Acc\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-7s", r.name.c_str());
    table += buf;
    for (int c = 1; c < classes; ++c) {
      std::snprintf(buf, sizeof buf, "  %7.4f", r.report.dice[c]);
      table += buf;
    }
    std::snprintf(buf, sizeof buf, "  %7.4f  %7.4f\n", r.report.miou, r.report.acc);
    table += buf;
  }
  std::cout << table;
  std::ofstream f(out_root / "ablation.txt");
  f << table;
  return 0;
}

int run_app(int argc, char** argv) {
  CLI::App app{"ET-Net: edge-attention guided segmentation at desk scale"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic nested-ellipse dataset");
  int gen_n = 8, gen_size = 128, gen_classes = 3;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--size", gen_size, "image side length (multiple of 16)");
  gen->add_option("--classes", gen_classes, "2 or 3");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model from a run config");
  std::string train_config;
  std::vector<std::string> train_sets;
  train->add_option("--config", train_config, "run config json");
  train->add_option("--set", train_sets, "override: section.key=value");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_out;
  bool eval_per_image = false, eval_preds = false;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--data", eval_data, "dataset root")->required();
  eval->add_option("--out", eval_out, "directory for metrics.txt");
  eval->add_flag("--per-image", eval_per_image, "average metrics per image instead of pooling");
  eval->add_flag("--predictions", eval_preds, "also write prediction images");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train base/+EGM/+WAM/full and compare");
  std::string ablate_config;
  std::vector<std::string> ablate_sets;
  ablate->add_option("--config", ablate_config, "run config json");
  ablate->add_option("--set", ablate_sets, "override: section.key=value");

  // predict
  auto* predict = app.add_subcommand("predict", "segment one image");
  std::string pred_ckpt, pred_image, pred_out = "predictions";
  predict->add_option("--checkpoint", pred_ckpt)->required();
  predict->add_option("--image", pred_image)->required();
  predict->add_option("--out", pred_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return cmd_gen_data(gen_n, gen_size, gen_classes, gen_seed, gen_out);
  if (train->parsed()) return cmd_train(train_config, train_sets);
  if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out, eval_per_image, eval_preds);
  if (ablate->parsed()) return cmd_ablate(ablate_config, ablate_sets);
  if (predict->parsed()) return cmd_predict(pred_ckpt, pred_image, pred_out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_app(argc, argv);
  } catch (const etnet::cfg::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}

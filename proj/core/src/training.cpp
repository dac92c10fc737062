#include "etnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "etnet/checkpoint.hpp"
#include "etnet/config.hpp"
#include "etnet/image_io.hpp"
#include "etnet/rng.hpp"

namespace etnet::train {

namespace fs = std::filesystem;

double poly_lr(long iters, const ScheduleConfig& sched) {
  if (iters < 0) throw std::invalid_argument("poly_lr: negative iteration");
  const long total = sched.total_iters();
  if (iters > total) {
    std::cerr << "poly_lr: iteration " << iters << " past total_iters " << total
              << ", clamping lr to 0\n";
    return 0.0;
  }
  const double frac = 1.0 - static_cast<double>(iters) / static_cast<double>(total);
  return sched.base_lr * std::pow(frac, sched.power);
}

void Adam::step(net::Network& net, double lr, long t) {
  if (t < 1) throw std::invalid_argument("Adam::step: t must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  net.visit_params([&](const std::string& name, nn::Param& p) {
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      const auto& d = p.value.dims();
      it = moments_.emplace(name, std::make_pair(nn::Tensor(d[0], d[1], d[2], d[3]),
                                                 nn::Tensor(d[0], d[1], d[2], d[3]))).first;
    }
    double* m = it->second.first.data();
    double* v = it->second.second.data();
    double* w = p.value.data();
    const double* g = p.grad.data();
    const std::int64_t n = p.value.size();
    const bool decay = p.decay && cfg_.weight_decay > 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      double gi = g[i];
      if (decay && cfg_.coupled_l2) gi += cfg_.weight_decay * w[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      if (decay && !cfg_.coupled_l2) w[i] -= lr * cfg_.weight_decay * w[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
    }
  });
}

void Adam::visit_moments(
    const std::function<void(const std::string&, nn::Tensor&, nn::Tensor&)>& fn) {
  for (auto& [name, mv] : moments_) fn(name, mv.first, mv.second);
}

void Adam::set_moments(const std::string& name, nn::Tensor m, nn::Tensor v) {
  moments_[name] = {std::move(m), std::move(v)};
}

Batch make_batch(std::span<const data::Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  const int h = samples[0].image.h, w = samples[0].image.w;
  const int n = static_cast<int>(samples.size());
  Batch b;
  b.images = nn::Tensor(n, 3, h, w);
  b.seg_labels.resize(static_cast<std::size_t>(n) * h * w);
  b.edge_labels.resize(static_cast<std::size_t>(n) * h * w);
  for (int ni = 0; ni < n; ++ni) {
    const data::Sample& s = samples[ni];
    if (s.image.h != h || s.image.w != w || s.mask.h != h || s.mask.w != w) {
      throw std::invalid_argument("make_batch: sample dims differ within the batch");
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) b.images.at(ni, c, y, x) = s.image.at(y, x, c);
        const std::size_t i = (static_cast<std::size_t>(ni) * h + y) * w + x;
        b.seg_labels[i] = s.mask.at(y, x);
        b.edge_labels[i] = s.edge.at(y, x);
      }
    }
  }
  return b;
}

Trainer::Trainer(net::Network network, const OptimizerConfig& opt, const ScheduleConfig& sched)
    : net_(std::move(network)), opt_(opt), sched_(sched) {}

LossRecord Trainer::step(std::span<const data::Sample> batch, const StepConfig& step_cfg) {
  if (!(step_cfg.weights.alpha >= 0.0 && step_cfg.weights.alpha <= 1.0)) {
    throw std::invalid_argument("train_step: alpha outside [0, 1]");
  }
  Batch b = make_batch(batch);
  net_.visit_params([](const std::string&, nn::Param& p) { p.zero_grad(); });

  nn::Tape tape;
  nn::Var input = tape.leaf(b.images, /*needs_grad=*/false);
  net::Network::Graph g = net_.build(tape, input, /*training=*/true);

  LossRecord rec;
  rec.iteration = iteration_;
  const double lr = poly_lr(iteration_, sched_);
  rec.lr = lr;

  double seg_value = 0.0;
  nn::Var loss = losses::lovasz_softmax_op(tape, g.seg_logits, b.seg_labels,
                                           step_cfg.present_classes_only, &seg_value);
  rec.seg = seg_value;
  rec.total = seg_value;
  if (step_cfg.joint_edge) {
    if (!g.edge_logits.valid()) {
      throw std::invalid_argument("train_step: edge loss requested but EGM is disabled");
    }
    double edge_value = 0.0;
    nn::Var edge_loss = losses::lovasz_softmax_op(tape, g.edge_logits, b.edge_labels,
                                                  step_cfg.present_classes_only, &edge_value);
    const double a = step_cfg.weights.alpha;
    loss = nn::affine_combine(tape, loss, a, edge_loss, 1.0 - a);
    rec.edge = edge_value;
    rec.total = a * seg_value + (1.0 - a) * edge_value;
  }
  if (!std::isfinite(rec.total)) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "non-finite loss at iteration %ld (total=%g seg=%g edge=%g)", iteration_,
                  rec.total, rec.seg, rec.edge.value_or(std::nan("")));
    throw std::runtime_error(msg);
  }

  tape.backward(loss);
  opt_.step(net_, lr, iteration_ + 1);
  ++iteration_;
  return rec;
}

Variant variant_from_string(const std::string& name) {
  if (name == "base") return Variant::Base;
  if (name == "egm" || name == "+egm") return Variant::Egm;
  if (name == "wam" || name == "+wam") return Variant::Wam;
  if (name == "full") return Variant::Full;
  throw std::invalid_argument("unknown variant '" + name + "' (base, egm, wam, full)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::Egm: return "+EGM";
    case Variant::Wam: return "+WAM";
    case Variant::Full: return "full";
  }
  return "?";
}

void apply_variant(net::NetworkConfig& cfg, Variant v) {
  cfg.use_egm = v == Variant::Egm || v == Variant::Full;
  cfg.use_wam = v == Variant::Wam || v == Variant::Full;
}

bool variant_has_edge_stream(Variant v) {
  return v == Variant::Egm || v == Variant::Full;
}

namespace {

std::array<std::uint8_t, 3> class_color(int cls) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> palette{{
      {0, 0, 0},
      {46, 204, 113},
      {241, 196, 15},
      {52, 152, 219},
      {155, 89, 182},
      {230, 126, 34},
      {26, 188, 156},
      {231, 76, 60},
  }};
  return palette[static_cast<std::size_t>(cls) % palette.size()];
}

struct Prediction {
  data::LabelMap seg;
  data::LabelMap edge;  // empty when no edge stream
};

Prediction predict_sample(net::Network& net, const data::Sample& sample) {
  const data::Sample padded = data::pad_to_multiple(sample, 16);
  const data::Sample batch_sample[] = {padded};
  Batch b = make_batch(batch_sample);
  net::NetworkOutput out = net.forward(b.images, /*training=*/false);

  const int h = sample.image.h, w = sample.image.w;
  const int classes = out.seg_logits.c();
  Prediction pred;
  pred.seg.h = h;
  pred.seg.w = w;
  pred.seg.v.resize(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_v = out.seg_logits.at(0, 0, y, x);
      for (int c = 1; c < classes; ++c) {
        const double v = out.seg_logits.at(0, c, y, x);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      pred.seg.at(y, x) = static_cast<std::uint8_t>(best);
    }
  }
  if (out.edge_logits) {
    pred.edge.h = h;
    pred.edge.w = w;
    pred.edge.v.resize(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        pred.edge.at(y, x) =
            out.edge_logits->at(0, 1, y, x) > out.edge_logits->at(0, 0, y, x) ? 1 : 0;
      }
    }
  }
  return pred;
}

void write_prediction_images(const fs::path& dir, const data::Sample& sample,
                             const Prediction& pred) {
  fs::create_directories(dir);
  data::write_png_gray(dir / (sample.id + "_mask.png"), pred.seg.h, pred.seg.w, pred.seg.v);

  // overlay: image blended with class tint, predicted edges drawn red
  const int h = sample.image.h, w = sample.image.w;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto tint = class_color(pred.seg.at(y, x));
      for (int c = 0; c < 3; ++c) {
        double v = 0.55 * sample.image.at(y, x, c) * 255.0 + 0.45 * tint[c];
        if (!pred.edge.v.empty() && pred.edge.at(y, x) == 1) {
          v = c == 0 ? 255.0 : 40.0;
        }
        rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  data::write_png_rgb(dir / (sample.id + "_overlay.png"), h, w, rgb);
}

}  // namespace

metrics::MetricReport evaluate(net::Network& net, const std::vector<data::Sample>& dataset,
                               const std::string& config_hash, const EvalOptions& opts) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const int classes = net.config().num_classes;
  for (const auto& s : dataset) {
    for (std::uint8_t v : s.mask.v) {
      if (v >= classes) {
        throw std::invalid_argument("evaluate: dataset label exceeds checkpoint class count");
      }
    }
  }

  metrics::ConfusionMatrix pooled(classes);
  metrics::ConfusionMatrix edge_cm(2);
  const bool has_edge = net.config().use_egm;

  // per-image mode averages the per-sample metrics instead of pooling pixels
  std::vector<double> pi_miou, pi_acc;
  std::vector<std::vector<double>> pi_dice(classes), pi_iou(classes);

  for (const auto& sample : dataset) {
    const Prediction pred = predict_sample(net, sample);
    metrics::ConfusionMatrix cm = metrics::accumulate(metrics::ConfusionMatrix(classes),
                                                      pred.seg.v, sample.mask.v);
    pooled = pooled.merged(cm);
    if (opts.per_image) {
      pi_miou.push_back(metrics::miou(cm));
      pi_acc.push_back(metrics::accuracy(cm));
      for (int c = 0; c < classes; ++c) {
        pi_dice[c].push_back(metrics::dice(cm, c));
        pi_iou[c].push_back(metrics::iou(cm, c));
      }
    }
    if (has_edge) {
      edge_cm = metrics::accumulate(edge_cm, pred.edge.v, sample.edge.v);
    }
    if (opts.predictions_dir) {
      write_prediction_images(*opts.predictions_dir, sample, pred);
    }
  }

  metrics::MetricReport report;
  if (opts.per_image) {
    auto mean = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    report.classes = classes;
    report.samples = static_cast<long>(dataset.size());
    report.config_hash = config_hash;
    for (int c = 0; c < classes; ++c) {
      report.dice.push_back(mean(pi_dice[c]));
      report.iou.push_back(mean(pi_iou[c]));
    }
    report.miou = mean(pi_miou);
    report.acc = mean(pi_acc);
  } else {
    report = metrics::report_from(pooled, static_cast<long>(dataset.size()), config_hash);
  }
  if (has_edge) {
    report.has_edge = true;
    report.edge_dice_fg = metrics::dice(edge_cm, 1);
  }
  return report;
}

std::string History::to_csv() const {
  std::string out = "iteration,lr,loss_total,loss_seg,loss_edge,eval_miou,eval_acc\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (const Row& r : rows) {
    out += std::to_string(r.loss.iteration);
    out += ',' + num(r.loss.lr);
    out += ',' + num(r.loss.total);
    out += ',' + num(r.loss.seg);
    out += ',';
    if (r.loss.edge) out += num(*r.loss.edge);
    out += ',';
    if (r.eval_miou) out += num(*r.eval_miou);
    out += ',';
    if (r.eval_acc) out += num(*r.eval_acc);
    out += '\n';
  }
  return out;
}

void History::write_csv(const fs::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << to_csv();
}

FitResult fit(const cfg::RunConfig& run) {
  net::NetworkConfig ncfg = run.network;
  bool joint_edge = false;
  if (run.variant == "custom") {
    joint_edge = ncfg.use_egm;
  } else {
    const Variant v = variant_from_string(run.variant);
    apply_variant(ncfg, v);
    joint_edge = variant_has_edge_stream(v);
  }
  ncfg.num_classes = run.classes;
  ncfg.validate();

  if (run.schedule.batch_size < 1) throw std::invalid_argument("fit: batch_size must be >= 1");
  if (run.schedule.epochs < 0) throw std::invalid_argument("fit: epochs must be >= 0");
  if (run.eval_every < 1) throw std::invalid_argument("fit: eval_every must be >= 1");
  if (run.augment.enabled) {
    if (run.augment.crop_size < 16 || run.augment.crop_size % 16 != 0) {
      throw std::invalid_argument("fit: augment.crop_size must be a positive multiple of 16");
    }
    if (!(run.augment.scale_min > 0.0) || run.augment.scale_max < run.augment.scale_min) {
      throw std::invalid_argument("fit: augment scale range must be positive and ordered");
    }
  }
  if (run.train_root.empty()) throw std::invalid_argument("fit: data.train_root is required");
  std::vector<data::Sample> train_set = data::load_dataset(run.train_root, run.classes, run.edge_kernel);
  if (train_set.empty()) throw std::runtime_error("fit: training dataset is empty");
  std::vector<data::Sample> val_set =
      run.val_root.empty() ? train_set : data::load_dataset(run.val_root, run.classes, run.edge_kernel);

  ScheduleConfig sched = run.schedule;
  sched.num_images = static_cast<int>(train_set.size());

  const fs::path out_dir(run.out_dir);
  fs::create_directories(out_dir / "checkpoints");
  {
    std::ofstream f(out_dir / "config.snapshot");
    if (!f) throw std::runtime_error("cannot write config snapshot");
    f << cfg::to_json(run);
  }
  const std::string hash = cfg::config_hash(run);

  Trainer trainer(net::Network(ncfg, run.seed), run.optimizer, sched);
  StepConfig step_cfg{run.loss_weights, joint_edge, run.present_classes_only};

  data::AugmentConfig aug = run.augment;
  aug.seed = run.seed;
  aug.edge_kernel = run.edge_kernel;

  EvalOptions eval_opts;
  eval_opts.per_image = run.per_image_metrics;
  eval_opts.edge_kernel = run.edge_kernel;

  FitResult result;
  result.best_checkpoint = out_dir / "checkpoints" / "best";
  result.last_checkpoint = out_dir / "checkpoints" / "last";

  if (sched.epochs == 0) {
    ckpt::save(result.last_checkpoint, trainer.network(), &trainer.optimizer(), 0);
    ckpt::save(result.best_checkpoint, trainer.network(), &trainer.optimizer(), 0);
    result.final_report = evaluate(trainer.network(), val_set, hash, eval_opts);
    result.history.write_csv(out_dir / "history.csv");
    std::ofstream f(out_dir / "metrics.txt");
    f << result.final_report.to_text();
    return result;
  }

  const int n = static_cast<int>(train_set.size());
  std::vector<int> order(n);
  std::uint64_t sample_counter = 0;
  double best_miou = -1.0;

  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix64(run.seed, static_cast<std::uint64_t>(epoch), fnv1a64("shuffle")));
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
    }

    // partial trailing batches are dropped so the iteration count stays
    // within total_iters; datasets smaller than one batch train whole
    const int usable = n >= sched.batch_size ? n - n % sched.batch_size : n;
    for (int start = 0; start < usable; start += sched.batch_size) {
      const int count = std::min(sched.batch_size, usable - start);
      std::vector<data::Sample> batch;
      batch.reserve(count);
      for (int k = 0; k < count; ++k) {
        const data::Sample& s = train_set[order[start + k]];
        if (aug.enabled) {
          batch.push_back(data::augment(s, aug, sample_counter));
        } else {
          if (s.image.h % 16 != 0 || s.image.w % 16 != 0) {
            throw std::invalid_argument(
                "fit: augmentation disabled but sample dims are not multiples of 16");
          }
          batch.push_back(s);
        }
        ++sample_counter;
      }
      LossRecord rec = trainer.step(batch, step_cfg);
      result.history.rows.push_back({rec, std::nullopt, std::nullopt});
    }

    const bool last_epoch = epoch == sched.epochs - 1;
    if ((epoch + 1) % run.eval_every == 0 || last_epoch) {
      EvalOptions opts = eval_opts;
      if (last_epoch) opts.predictions_dir = out_dir / "predictions";
      metrics::MetricReport report = evaluate(trainer.network(), val_set, hash, opts);
      if (!result.history.rows.empty()) {
        result.history.rows.back().eval_miou = report.miou;
        result.history.rows.back().eval_acc = report.acc;
      }
      if (report.miou > best_miou) {
        best_miou = report.miou;
        ckpt::save(result.best_checkpoint, trainer.network(), &trainer.optimizer(),
                   trainer.iteration());
      }
      if (last_epoch) result.final_report = report;
    }
  }

  ckpt::save(result.last_checkpoint, trainer.network(), &trainer.optimizer(), trainer.iteration());
  result.history.write_csv(out_dir / "history.csv");
  {
    std::ofstream f(out_dir / "metrics.txt");
    f << result.final_report.to_text();
  }
  return result;
}

}  // namespace etnet::train

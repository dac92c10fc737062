#include "etnet/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "etnet/rng.hpp"

namespace etnet::cfg {

using nlohmann::json;

namespace {

// Reads known keys out of a json object and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad value for config key '" + name_ + "." + key + "'");
    }
  }

  void get_array4(const char* key, std::array<int, 4>& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& a = j_.at(key);
    if (!a.is_array() || a.size() != 4) {
      throw ConfigError("config key '" + name_ + "." + key + "' must be a 4-element array");
    }
    for (int i = 0; i < 4; ++i) {
      try {
        dst[i] = a.at(i).get<int>();
      } catch (const json::exception&) {
        throw ConfigError("bad value for config key '" + name_ + "." + key + "'");
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw ConfigError("unknown config key '" + name_ + "." + key + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

std::string fusion_to_string(net::Fusion f) {
  return f == net::Fusion::Concat ? "concat" : "add";
}

net::Fusion fusion_from_string(const std::string& s) {
  if (s == "concat") return net::Fusion::Concat;
  if (s == "add") return net::Fusion::Add;
  throw ConfigError("network.fusion must be 'concat' or 'add'");
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["network"] = {
      {"input_channels", c.network.input_channels},
      {"stem_width", c.network.stem_width},
      {"block_widths", c.network.block_widths},
      {"blocks_per_stage", c.network.blocks_per_stage},
      {"decoder_channels", c.network.decoder_channels},
      {"edge_channels", c.network.edge_channels},
      {"attention_reduction", c.network.attention_reduction},
      {"dilation_stage4", c.network.dilation_stage4},
      {"fusion", fusion_to_string(c.network.fusion)},
      {"use_egm", c.network.use_egm},
      {"use_wam", c.network.use_wam},
  };
  j["augment"] = {
      {"enabled", c.augment.enabled},
      {"mirror_prob", c.augment.mirror_prob},
      {"scale_min", c.augment.scale_min},
      {"scale_max", c.augment.scale_max},
      {"rot_min_deg", c.augment.rot_min_deg},
      {"rot_max_deg", c.augment.rot_max_deg},
      {"color_jitter_prob", c.augment.color_jitter_prob},
      {"crop_size", c.augment.crop_size},
  };
  j["schedule"] = {
      {"base_lr", c.schedule.base_lr},
      {"power", c.schedule.power},
      {"epochs", c.schedule.epochs},
      {"batch_size", c.schedule.batch_size},
  };
  j["optimizer"] = {
      {"beta1", c.optimizer.beta1},
      {"beta2", c.optimizer.beta2},
      {"weight_decay", c.optimizer.weight_decay},
      {"epsilon", c.optimizer.epsilon},
      {"coupled_l2", c.optimizer.coupled_l2},
  };
  j["loss"] = {
      {"alpha", c.loss_weights.alpha},
      {"present_classes_only", c.present_classes_only},
  };
  j["data"] = {
      {"train_root", c.train_root},
      {"val_root", c.val_root},
      {"classes", c.classes},
      {"edge_kernel", c.edge_kernel},
  };
  j["run"] = {
      {"variant", c.variant},
      {"out_dir", c.out_dir},
      {"seed", c.seed},
      {"eval_every", c.eval_every},
      {"per_image_metrics", c.per_image_metrics},
  };
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig c;
  const std::set<std::string> known_sections = {"network", "augment", "schedule",
                                                "optimizer", "loss", "data", "run"};
  for (const auto& [key, value] : j.items()) {
    if (!known_sections.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  if (j.contains("network")) {
    Section s(j.at("network"), "network");
    s.get("input_channels", c.network.input_channels);
    s.get("stem_width", c.network.stem_width);
    s.get_array4("block_widths", c.network.block_widths);
    s.get_array4("blocks_per_stage", c.network.blocks_per_stage);
    s.get("decoder_channels", c.network.decoder_channels);
    s.get("edge_channels", c.network.edge_channels);
    s.get("attention_reduction", c.network.attention_reduction);
    s.get("dilation_stage4", c.network.dilation_stage4);
    std::string fusion = fusion_to_string(c.network.fusion);
    s.get("fusion", fusion);
    c.network.fusion = fusion_from_string(fusion);
    s.get("use_egm", c.network.use_egm);
    s.get("use_wam", c.network.use_wam);
    s.finish();
  }
  if (j.contains("augment")) {
    Section s(j.at("augment"), "augment");
    s.get("enabled", c.augment.enabled);
    s.get("mirror_prob", c.augment.mirror_prob);
    s.get("scale_min", c.augment.scale_min);
    s.get("scale_max", c.augment.scale_max);
    s.get("rot_min_deg", c.augment.rot_min_deg);
    s.get("rot_max_deg", c.augment.rot_max_deg);
    s.get("color_jitter_prob", c.augment.color_jitter_prob);
    s.get("crop_size", c.augment.crop_size);
    s.finish();
  }
  if (j.contains("schedule")) {
    Section s(j.at("schedule"), "schedule");
    s.get("base_lr", c.schedule.base_lr);
    s.get("power", c.schedule.power);
    s.get("epochs", c.schedule.epochs);
    s.get("batch_size", c.schedule.batch_size);
    s.finish();
  }
  if (j.contains("optimizer")) {
    Section s(j.at("optimizer"), "optimizer");
    s.get("beta1", c.optimizer.beta1);
    s.get("beta2", c.optimizer.beta2);
    s.get("weight_decay", c.optimizer.weight_decay);
    s.get("epsilon", c.optimizer.epsilon);
    s.get("coupled_l2", c.optimizer.coupled_l2);
    s.finish();
  }
  if (j.contains("loss")) {
    Section s(j.at("loss"), "loss");
    s.get("alpha", c.loss_weights.alpha);
    s.get("present_classes_only", c.present_classes_only);
    s.finish();
  }
  if (j.contains("data")) {
    Section s(j.at("data"), "data");
    s.get("train_root", c.train_root);
    s.get("val_root", c.val_root);
    s.get("classes", c.classes);
    s.get("edge_kernel", c.edge_kernel);
    s.finish();
  }
  if (j.contains("run")) {
    Section s(j.at("run"), "run");
    s.get("variant", c.variant);
    s.get("out_dir", c.out_dir);
    s.get("seed", c.seed);
    s.get("eval_every", c.eval_every);
    s.get("per_image_metrics", c.per_image_metrics);
    s.finish();
  }
  return c;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid json: ") + e.what());
  }
  return run_config_from_json(j);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must look like section.key=value: '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json j = run_config_to_json(cfg);
  json* node = &j;
  std::size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    const auto dot = path.find('.', start);
    parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) throw ConfigError("unknown config key '" + path + "'");
    node = &node->at(parts[i]);
  }
  if (parts.empty() || !node->is_object() || !node->contains(parts.back())) {
    throw ConfigError("unknown config key '" + path + "'");
  }
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings pass through
  }
  (*node)[parts.back()] = value;
  cfg = run_config_from_json(j);
}

std::string to_json(const RunConfig& cfg) { return run_config_to_json(cfg).dump(2) + "\n"; }

std::string config_hash(const RunConfig& cfg) {
  const std::string canon = run_config_to_json(cfg).dump();
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

std::string network_config_json(const net::NetworkConfig& c) {
  json j = {
      {"input_channels", c.input_channels},
      {"num_classes", c.num_classes},
      {"stem_width", c.stem_width},
      {"block_widths", c.block_widths},
      {"blocks_per_stage", c.blocks_per_stage},
      {"decoder_channels", c.decoder_channels},
      {"edge_channels", c.edge_channels},
      {"attention_reduction", c.attention_reduction},
      {"dilation_stage4", c.dilation_stage4},
      {"fusion", fusion_to_string(c.fusion)},
      {"use_egm", c.use_egm},
      {"use_wam", c.use_wam},
  };
  return j.dump();
}

net::NetworkConfig network_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("bad network config json: ") + e.what());
  }
  net::NetworkConfig c;
  Section s(j, "network");
  s.get("input_channels", c.input_channels);
  s.get("num_classes", c.num_classes);
  s.get("stem_width", c.stem_width);
  s.get_array4("block_widths", c.block_widths);
  s.get_array4("blocks_per_stage", c.blocks_per_stage);
  s.get("decoder_channels", c.decoder_channels);
  s.get("edge_channels", c.edge_channels);
  s.get("attention_reduction", c.attention_reduction);
  s.get("dilation_stage4", c.dilation_stage4);
  std::string fusion = fusion_to_string(c.fusion);
  s.get("fusion", fusion);
  c.fusion = fusion_from_string(fusion);
  s.get("use_egm", c.use_egm);
  s.get("use_wam", c.use_wam);
  s.finish();
  return c;
}

std::string network_config_hash(const net::NetworkConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(network_config_json(cfg))));
  return buf;
}

}  // namespace etnet::cfg

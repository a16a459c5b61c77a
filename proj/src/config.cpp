#include "tale/config.hpp"

#include <cmath>
#include <fstream>

#include "tale/util.hpp"

namespace tale {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> kDefaults = {
      {"model.d", "64"},
      {"model.dz", "32"},
      {"model.window", "1024"},
      {"model.n_demographics", "2"},
      {"data.max_covariate_days", "3650"},
      {"time_weight.variant", "polynomial"},
      {"time_weight.order", "5"},
      {"time_weight.mlp_width", "16"},
      {"loss.gamma_mix", "1"},
      {"loss.focal_alpha", "0.25"},
      {"loss.focal_gamma", "2"},
      {"loss.smooth_pos", "0.95"},
      {"loss.smooth_neg", "0.05"},
      {"loss.n_mc", "0"},
      {"train.pretrain_epochs", "10"},
      {"train.pretrain_lr", "1e-4"},
      {"train.batch_size", "16"},
      {"train.finetune_epochs", "5"},
      {"train.finetune_lr_pretrained", "1e-5"},
      {"train.finetune_lr_new", "1e-4"},
      {"train.adam_beta1", "0.9"},
      {"train.adam_beta2", "0.999"},
      {"train.adam_eps", "1e-8"},
      {"train.clip_norm", "5"},
      {"train.seed", "0"},
  };
  return kDefaults;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (defaults().find(key) == defaults().end()) throw ConfigError("unknown config key '" + key + "'");
  if (value.empty()) throw ConfigError("empty value for config key '" + key + "'");
  values_[key] = value;
}

double RunConfig::get_double(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as a number");
  }
}

int RunConfig::get_int(const std::string& key) const {
  double v = get_double(key);
  int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    throw ConfigError("config key '" + key + "' must be an integer");
  return i;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  double v = get_double(key);
  if (v < 0 || v != std::floor(v))
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

std::string RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig c;
  c.d = static_cast<std::size_t>(get_int("model.d"));
  c.dz = static_cast<std::size_t>(get_int("model.dz"));
  c.window = static_cast<std::size_t>(get_int("model.window"));
  c.n_demographics = static_cast<std::size_t>(get_int("model.n_demographics"));
  c.max_covariate_days = get_double("data.max_covariate_days");
  c.time_weight.variant = weight_variant_from_string(get_string("time_weight.variant"));
  c.time_weight.order = get_int("time_weight.order");
  c.time_weight.mlp_width = get_int("time_weight.mlp_width");
  c.loss.gamma_mix = get_double("loss.gamma_mix");
  c.loss.focal_alpha = get_double("loss.focal_alpha");
  c.loss.focal_gamma = get_double("loss.focal_gamma");
  c.loss.smooth_pos = get_double("loss.smooth_pos");
  c.loss.smooth_neg = get_double("loss.smooth_neg");
  c.loss.n_mc = get_int("loss.n_mc");
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.pretrain_epochs = get_int("train.pretrain_epochs");
  c.pretrain_lr = get_double("train.pretrain_lr");
  c.batch_size = get_int("train.batch_size");
  c.finetune_epochs = get_int("train.finetune_epochs");
  c.finetune_lr_pretrained = get_double("train.finetune_lr_pretrained");
  c.finetune_lr_new = get_double("train.finetune_lr_new");
  c.adam_beta1 = get_double("train.adam_beta1");
  c.adam_beta2 = get_double("train.adam_beta2");
  c.adam_eps = get_double("train.adam_eps");
  c.clip_norm = get_double("train.clip_norm");
  c.seed = get_u64("train.seed");
  c.validate();
  return c;
}

}  // namespace tale

// Run configuration: flat key=value files, override strings, and validation.
#pragma once

#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "disent/controllers.hpp"
#include "disent/errors.hpp"

namespace disent {

struct TrainConfig {
  int resolution = 32;
  int batch_size = 16;
  std::int64_t total_steps = 20000;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double epsilon = 0.125;
  double mu = 0.1;
  double l_gamma = 0.01;
  double b_gamma = 0.01;
  double ema_decay = 0.99;
  std::string ablation_mode = "e";
  std::uint64_t seed = 1;
  std::int64_t checkpoint_interval = 5000;
  double holdout_fraction = 0.25;
  int classifier_channels = 0;  // 0 = choose by resolution

  AblationMode mode() const { return parse_ablation_mode(ablation_mode); }

  // The published widths target accelerator budgets; the desk-scale default
  // narrows the pair classifiers to keep CPU steps tractable.
  int resolved_classifier_channels() const {
    if (classifier_channels > 0) return classifier_channels;
    return resolution == 32 ? 64 : 512;
  }

  void validate() const {
    if (resolution != 32 && resolution != 64)
      throw ConfigError("resolution: expected 32 or 64, got " + std::to_string(resolution));
    if (batch_size < 2)
      throw ConfigError("batch_size: need >= 2 for marginal pairings");
    if (total_steps < 1) throw ConfigError("total_steps: must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate: must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1: out of [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2: out of [0,1)");
    if (!(epsilon >= 0.0)) throw ConfigError("epsilon: must be nonnegative");
    if (!(mu > 0.0)) throw ConfigError("mu: must be positive");
    if (!(l_gamma >= 0.0)) throw ConfigError("l_gamma: must be nonnegative");
    if (!(b_gamma >= 0.0)) throw ConfigError("b_gamma: must be nonnegative");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay: out of [0,1)");
    parse_ablation_mode(ablation_mode);
    if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval: must be positive");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
      throw ConfigError("holdout_fraction: out of (0,1)");
    if (classifier_channels < 0) throw ConfigError("classifier_channels: must be >= 0");
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out;
  in >> out;
  if (in.fail() || !in.eof())
    throw ConfigError(key + ": cannot parse '" + value + "'");
  return out;
}

}  // namespace detail

inline void apply_config_entry(TrainConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_number;
  if (key == "resolution") cfg.resolution = parse_number<int>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_number<int>(key, value);
  else if (key == "total_steps" || key == "steps")
    cfg.total_steps = parse_number<std::int64_t>(key, value);
  else if (key == "learning_rate") cfg.learning_rate = parse_number<double>(key, value);
  else if (key == "adam_beta1") cfg.adam_beta1 = parse_number<double>(key, value);
  else if (key == "adam_beta2") cfg.adam_beta2 = parse_number<double>(key, value);
  else if (key == "epsilon") cfg.epsilon = parse_number<double>(key, value);
  else if (key == "mu") cfg.mu = parse_number<double>(key, value);
  else if (key == "l_gamma") cfg.l_gamma = parse_number<double>(key, value);
  else if (key == "b_gamma") cfg.b_gamma = parse_number<double>(key, value);
  else if (key == "ema_decay") cfg.ema_decay = parse_number<double>(key, value);
  else if (key == "ablation_mode") cfg.ablation_mode = value;
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "checkpoint_interval")
    cfg.checkpoint_interval = parse_number<std::int64_t>(key, value);
  else if (key == "holdout_fraction") cfg.holdout_fraction = parse_number<double>(key, value);
  else if (key == "classifier_channels")
    cfg.classifier_channels = parse_number<int>(key, value);
  else
    throw ConfigError("unknown config key '" + key + "'");
}

// "key=value" with surrounding whitespace tolerated.
inline void apply_config_line(TrainConfig& cfg, const std::string& line) {
  const auto eq = line.find('=');
  if (eq == std::string::npos)
    throw ConfigError("expected key=value, got '" + line + "'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    apply_config_line(cfg, line);
  }
  return cfg;
}

inline TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

inline std::string config_to_kv(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "resolution = " << c.resolution << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "total_steps = " << c.total_steps << "\n"
      << "learning_rate = " << c.learning_rate << "\n"
      << "adam_beta1 = " << c.adam_beta1 << "\n"
      << "adam_beta2 = " << c.adam_beta2 << "\n"
      << "epsilon = " << c.epsilon << "\n"
      << "mu = " << c.mu << "\n"
      << "l_gamma = " << c.l_gamma << "\n"
      << "b_gamma = " << c.b_gamma << "\n"
      << "ema_decay = " << c.ema_decay << "\n"
      << "ablation_mode = " << c.ablation_mode << "\n"
      << "seed = " << c.seed << "\n"
      << "checkpoint_interval = " << c.checkpoint_interval << "\n"
      << "holdout_fraction = " << c.holdout_fraction << "\n"
      << "classifier_channels = " << c.classifier_channels << "\n";
  return out.str();
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"resolution", c.resolution},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"epsilon", c.epsilon},
          {"mu", c.mu},
          {"l_gamma", c.l_gamma},
          {"b_gamma", c.b_gamma},
          {"ema_decay", c.ema_decay},
          {"ablation_mode", c.ablation_mode},
          {"seed", c.seed},
          {"checkpoint_interval", c.checkpoint_interval},
          {"holdout_fraction", c.holdout_fraction},
          {"classifier_channels", c.classifier_channels}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.total_steps = j.at("total_steps").get<std::int64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.mu = j.at("mu").get<double>();
  c.l_gamma = j.at("l_gamma").get<double>();
  c.b_gamma = j.at("b_gamma").get<double>();
  c.ema_decay = j.at("ema_decay").get<double>();
  c.ablation_mode = j.at("ablation_mode").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.checkpoint_interval = j.at("checkpoint_interval").get<std::int64_t>();
  c.holdout_fraction = j.at("holdout_fraction").get<double>();
  c.classifier_channels = j.at("classifier_channels").get<int>();
  return c;
}

}  // namespace disent

// Checkpoint container: a fixed magic, a JSON header describing config and
// training state, then a float32 payload holding every parameter with its
// Adam moments. Loading verifies shapes, names, and a payload digest, so a
// resumed run continues from bit-identical state.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "disent/config.hpp"
#include "disent/controllers.hpp"
#include "disent/hash.hpp"
#include "disent/mi.hpp"

namespace disent {

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'N', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  TrainConfig config;
  std::int64_t step = 0;
  DualControllerState controller;
  MiEstimate i_t, i_tprime;
  std::int64_t opt_generator_steps = 0;
  std::int64_t opt_classifier_steps = 0;
  std::int64_t opt_monitor_steps = 0;
};

namespace detail {

inline nlohmann::json mi_to_json(const MiEstimate& e) {
  return {{"batch_value", e.batch_value},
          {"ema_value", e.ema_value},
          {"ema_decay", e.ema_decay},
          {"warm", e.warm}};
}

inline MiEstimate mi_from_json(const nlohmann::json& j) {
  MiEstimate e;
  e.batch_value = j.at("batch_value").get<double>();
  e.ema_value = j.at("ema_value").get<double>();
  e.ema_decay = j.at("ema_decay").get<double>();
  e.warm = j.at("warm").get<bool>();
  return e;
}

inline nlohmann::json controller_to_json(const DualControllerState& s) {
  return {{"lambda", s.lambda}, {"gamma", s.gamma},     {"mu", s.mu},
          {"epsilon", s.epsilon}, {"l_gamma", s.l_gamma}, {"b_gamma", s.b_gamma}};
}

inline DualControllerState controller_from_json(const nlohmann::json& j) {
  DualControllerState s;
  s.lambda = j.at("lambda").get<double>();
  s.gamma = j.at("gamma").get<double>();
  s.mu = j.at("mu").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.l_gamma = j.at("l_gamma").get<double>();
  s.b_gamma = j.at("b_gamma").get<double>();
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                            const std::vector<Param<float>*>& params) {
  std::vector<float> payload;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto* p : params) {
    plist.push_back({{"name", p->name}, {"rows", p->rows}, {"cols", p->cols}});
    payload.insert(payload.end(), p->value.begin(), p->value.end());
    payload.insert(payload.end(), p->adam_m.begin(), p->adam_m.end());
    payload.insert(payload.end(), p->adam_v.begin(), p->adam_v.end());
  }
  nlohmann::json header{
      {"format_version", kCheckpointVersion},
      {"config", config_to_json(meta.config)},
      {"step", meta.step},
      {"controller", detail::controller_to_json(meta.controller)},
      {"mi", {{"i_t", detail::mi_to_json(meta.i_t)}, {"i_tprime", detail::mi_to_json(meta.i_tprime)}}},
      {"optimizer_steps",
       {{"generator", meta.opt_generator_steps},
        {"classifier", meta.opt_classifier_steps},
        {"monitor", meta.opt_monitor_steps}}},
      {"params", std::move(plist)},
      {"payload_floats", payload.size()},
      {"payload_sha256", sha256_hex(payload.data(), payload.size() * sizeof(float))}};
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 4);
  const std::uint32_t ver = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), std::streamsize(htext.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size() * sizeof(float)));
  if (!out) throw IoError("short write on checkpoint: " + path);
}

namespace detail {

inline nlohmann::json read_checkpoint_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  std::uint32_t ver = 0;
  std::uint64_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  if (ver != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(ver) + ": " + path);
  std::string htext(hlen, '\0');
  in.read(htext.data(), std::streamsize(hlen));
  if (!in) throw IoError("truncated checkpoint header: " + path);
  return nlohmann::json::parse(htext);
}

inline CheckpointMeta meta_from_header(const nlohmann::json& h) {
  CheckpointMeta meta;
  meta.config = config_from_json(h.at("config"));
  meta.step = h.at("step").get<std::int64_t>();
  meta.controller = controller_from_json(h.at("controller"));
  meta.i_t = mi_from_json(h.at("mi").at("i_t"));
  meta.i_tprime = mi_from_json(h.at("mi").at("i_tprime"));
  meta.opt_generator_steps = h.at("optimizer_steps").at("generator").get<std::int64_t>();
  meta.opt_classifier_steps = h.at("optimizer_steps").at("classifier").get<std::int64_t>();
  meta.opt_monitor_steps = h.at("optimizer_steps").at("monitor").get<std::int64_t>();
  return meta;
}

}  // namespace detail

// Header only: enough to rebuild the model before loading parameters.
inline CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  return detail::meta_from_header(detail::read_checkpoint_header(in, path));
}

// Fills params in place; the stored list must match name for name, shape for
// shape, in order.
inline CheckpointMeta load_checkpoint(const std::string& path,
                                      const std::vector<Param<float>*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  const nlohmann::json header = detail::read_checkpoint_header(in, path);
  const CheckpointMeta meta = detail::meta_from_header(header);

  const auto& plist = header.at("params");
  if (plist.size() != params.size())
    throw IoError("checkpoint holds " + std::to_string(plist.size()) + " params, model has " +
                  std::to_string(params.size()));
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = plist[i];
    if (e.at("name").get<std::string>() != params[i]->name ||
        e.at("rows").get<int>() != params[i]->rows || e.at("cols").get<int>() != params[i]->cols)
      throw IoError("checkpoint param mismatch at '" + params[i]->name + "'");
    total += 3 * params[i]->size();
  }
  if (header.at("payload_floats").get<std::size_t>() != total)
    throw IoError("checkpoint payload size mismatch");

  std::vector<float> payload(total);
  in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(total * sizeof(float)));
  if (!in) throw IoError("truncated checkpoint payload: " + path);
  if (sha256_hex(payload.data(), payload.size() * sizeof(float)) !=
      header.at("payload_sha256").get<std::string>())
    throw IoError("checkpoint payload digest mismatch: " + path);

  const float* src = payload.data();
  for (auto* p : params) {
    std::copy(src, src + p->size(), p->value.begin());
    src += p->size();
    std::copy(src, src + p->size(), p->adam_m.begin());
    src += p->size();
    std::copy(src, src + p->size(), p->adam_v.begin());
    src += p->size();
    p->zero_grad();
  }
  return meta;
}

}  // namespace disent

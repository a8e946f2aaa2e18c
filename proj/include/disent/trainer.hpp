// The alternating training loop: one update each for the pair classifier and
// the monitor on detached codes, then one generative update with routed
// losses, then EMA and controller updates.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "disent/config.hpp"
#include "disent/controllers.hpp"
#include "disent/checkpoint.hpp"
#include "disent/mi.hpp"
#include "disent/networks.hpp"
#include "disent/optimizer.hpp"
#include "disent/sprites.hpp"

namespace disent {

// Per-purpose stream tags mixed into counter-based seeds, so every consumer
// of randomness draws from its own stateless stream and resume needs no
// engine state.
inline constexpr std::uint64_t kSeedModelInit = 0x10;
inline constexpr std::uint64_t kSeedClassifierInit = 0x20;
inline constexpr std::uint64_t kSeedMonitorInit = 0x30;
inline constexpr std::uint64_t kSeedSplit = 0x40;
inline constexpr std::uint64_t kTagData = 0xD0;
inline constexpr std::uint64_t kTagNoise = 0xA0;
inline constexpr std::uint64_t kTagPairing = 0xE0;

struct StepMetrics {
  std::int64_t step = 0;  // 1-based, equals the record count so far
  double L = 0, L_rec = 0, KL_value = 0, L_VB = 0;
  double I_T_batch = 0, I_T_ema = 0, I_Tprime_batch = 0, I_Tprime_ema = 0;
  double lambda = 0, gamma = 0, L_MI = 0;
  double classifier_loss_T = 0, classifier_loss_Tprime = 0;
  double learning_rate = 0;

  nlohmann::ordered_json to_json() const {
    return {{"step", step},
            {"L", L},
            {"L_rec", L_rec},
            {"KL_value", KL_value},
            {"L_VB", L_VB},
            {"I_T_batch", I_T_batch},
            {"I_T_ema", I_T_ema},
            {"I_Tprime_batch", I_Tprime_batch},
            {"I_Tprime_ema", I_Tprime_ema},
            {"lambda", lambda},
            {"gamma", gamma},
            {"L_MI", L_MI},
            {"classifier_loss_T", classifier_loss_T},
            {"classifier_loss_Tprime", classifier_loss_Tprime},
            {"learning_rate", learning_rate}};
  }

  static StepMetrics from_json(const nlohmann::json& j) {
    StepMetrics m;
    m.step = j.at("step").get<std::int64_t>();
    m.L = j.at("L").get<double>();
    m.L_rec = j.at("L_rec").get<double>();
    m.KL_value = j.at("KL_value").get<double>();
    m.L_VB = j.at("L_VB").get<double>();
    m.I_T_batch = j.at("I_T_batch").get<double>();
    m.I_T_ema = j.at("I_T_ema").get<double>();
    m.I_Tprime_batch = j.at("I_Tprime_batch").get<double>();
    m.I_Tprime_ema = j.at("I_Tprime_ema").get<double>();
    m.lambda = j.at("lambda").get<double>();
    m.gamma = j.at("gamma").get<double>();
    m.L_MI = j.at("L_MI").get<double>();
    m.classifier_loss_T = j.at("classifier_loss_T").get<double>();
    m.classifier_loss_Tprime = j.at("classifier_loss_Tprime").get<double>();
    m.learning_rate = j.at("learning_rate").get<double>();
    return m;
  }
};

template <typename Real>
Tensor<Real> reparameterize(const PosteriorGaussian<Real>& posterior,
                            const Tensor<Real>& noise) {
  require_same_shape(posterior.mean, noise, "reparameterize");
  Tensor<Real> out = posterior.mean;
  out.flat() += noise.flat();
  return out;
}

// Gaussian negative log-likelihood up to constants: half the batch-mean of
// the summed squared residual.
template <typename Real>
Real reconstruction_loss(const Tensor<Real>& x2, const Tensor<Real>& decoded) {
  require_same_shape(x2, decoded, "reconstruction_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < x2.size(); ++i) {
    const double d = double(decoded.data[i]) - double(x2.data[i]);
    acc += d * d;
  }
  return Real(0.5 * acc / x2.b);
}

template <typename Real>
Tensor<Real> reconstruction_loss_grad(const Tensor<Real>& x2, const Tensor<Real>& decoded) {
  require_same_shape(x2, decoded, "reconstruction_loss");
  Tensor<Real> g = Tensor<Real>::zeros_like(x2);
  const Real inv_b = Real(1) / Real(x2.b);
  for (std::size_t i = 0; i < x2.size(); ++i)
    g.data[i] = (decoded.data[i] - x2.data[i]) * inv_b;
  return g;
}

template <typename Real = float>
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_((cfg.validate(), cfg)),
        mode_(cfg.mode()),
        model_(cfg.resolution),
        classifier_("classifier", cfg.resolved_classifier_channels()),
        monitor_("monitor", cfg.resolved_classifier_channels()),
        controller_(make_controller_state(mode_, cfg.mu, cfg.epsilon, cfg.l_gamma, cfg.b_gamma)),
        split_(train_test_split_factors(cfg.holdout_fraction, mix_seed(cfg.seed, kSeedSplit))),
        opt_generator_(nullptr),
        opt_classifier_(nullptr),
        opt_monitor_(nullptr) {
    model_.init(mix_seed(cfg.seed, kSeedModelInit));
    Rng rc(mix_seed(cfg.seed, kSeedClassifierInit));
    classifier_.init(rc);
    Rng rm(mix_seed(cfg.seed, kSeedMonitorInit));
    monitor_.init(rm);
    const Real b1 = Real(cfg.adam_beta1), b2 = Real(cfg.adam_beta2);
    opt_generator_ = std::make_unique<Adam<Real>>(model_.params(), b1, b2);
    opt_classifier_ = std::make_unique<Adam<Real>>(classifier_.params(), b1, b2);
    opt_monitor_ = std::make_unique<Adam<Real>>(monitor_.params(), b1, b2);
    i_t_.ema_decay = cfg.ema_decay;
    i_tprime_.ema_decay = cfg.ema_decay;
  }

  // Deterministic per-step data: the same step index always yields the same
  // batch, noise, and marginal pairing, in any process.
  PairBatch<Real> sample_step_batch(std::int64_t step) const {
    return sample_pair_batch<Real>(mix_seed(cfg_.seed, std::uint64_t(step), kTagData),
                                   cfg_.batch_size, cfg_.resolution, split_.train);
  }

  Tensor<Real> make_step_noise(std::int64_t step) const {
    Rng rng(mix_seed(cfg_.seed, std::uint64_t(step), kTagNoise));
    const int e = code_extent(cfg_.resolution);
    Tensor<Real> n(cfg_.batch_size, e, e, kCodeChannels);
    rng.fill_normal(n.data.data(), n.size());
    return n;
  }

  std::vector<int> make_step_pairing(std::int64_t step) const {
    Rng rng(mix_seed(cfg_.seed, std::uint64_t(step), kTagPairing));
    return make_marginal_pairs(cfg_.batch_size, rng);
  }

  // One full alternating update; `step` is the 0-based index of this update.
  StepMetrics train_step(std::int64_t step, const PairBatch<Real>& pair,
                         const Tensor<Real>& noise, const std::vector<int>& pairing) {
    const Real lr = decayed_lr(Real(cfg_.learning_rate), step, cfg_.total_steps);

    PosteriorGaussian<Real> posterior = model_.encode_pose(pair.x2);
    EncoderOutput<Real> appearance = model_.encode_appearance(pair.x1);
    Tensor<Real> pose_code = reparameterize(posterior, noise);
    Tensor<Real> decoded = model_.decode(pose_code, appearance.feature_map);

    // Classifier and monitor updates on detached codes; both see the same
    // joint batch and the same marginal pairing.
    const auto t_step = train_classifier_step(classifier_, *opt_classifier_, pose_code,
                                              appearance.feature_map, pairing, lr);
    const auto m_step = train_classifier_step(monitor_, *opt_monitor_, pose_code,
                                              appearance.feature_map, pairing, lr);

    // MI estimates from the freshly updated classifiers.
    classifier_.forward_features(pose_code, appearance.feature_map);
    const double i_t_batch = mean_of(classifier_.logits());
    monitor_.forward_features(pose_code, appearance.feature_map);
    const double i_tprime_batch = mean_of(monitor_.logits());

    StepMetrics m;
    m.step = step + 1;
    m.lambda = controller_.lambda;
    m.gamma = controller_.gamma;
    m.learning_rate = lr;
    m.classifier_loss_T = t_step.loss;
    m.classifier_loss_Tprime = m_step.loss;
    m.I_T_batch = i_t_batch;
    m.I_Tprime_batch = i_tprime_batch;
    m.L_rec = reconstruction_loss(pair.x2, decoded);
    m.KL_value = kl_to_standard_prior(posterior.mean);
    m.L_VB = m.gamma * m.KL_value;
    m.L_MI = uses_mi_loss(mode_) ? loss_mi(i_t_batch, controller_) : 0.0;
    m.L = m.L_rec + m.L_VB + m.L_MI;

    // Generative update. The decoder and the appearance encoder receive the
    // reconstruction gradient only; the pose encoder additionally receives
    // the KL and penalty gradients. The classifier weights stay frozen here
    // and the monitor feeds no gradient to anything.
    opt_generator_->zero_grad();
    Tensor<Real> ddecoded = reconstruction_loss_grad(pair.x2, decoded);
    auto [dpose, dapp] = model_.decoder().backward(ddecoded);

    if (uses_mi_loss(mode_)) {
      const double coeff = dloss_mi_di(i_t_batch, controller_);
      if (coeff != 0.0) {
        std::vector<typename Classifier<Real>::PairGrad> pg;
        pg.reserve(cfg_.batch_size);
        const Real per_logit = Real(coeff / cfg_.batch_size);
        for (int i = 0; i < cfg_.batch_size; ++i) pg.push_back({i, i, per_logit});
        auto [dpose_mi, dapp_mi] = classifier_.backward(
            pg, {.want_dpose = true, .want_dapp = false, .accum_wgrad = false});
        dpose.flat() += dpose_mi.flat();
      }
    }
    if (uses_kl_term(mode_) && controller_.gamma != 0.0) {
      Tensor<Real> dkl = kl_to_standard_prior_grad(posterior.mean);
      dpose.flat() += Real(controller_.gamma) * dkl.flat();
    }
    model_.pose_encoder().backward(dpose);
    model_.app_encoder().backward(dapp);
    opt_generator_->step(lr);

    i_t_.update(i_t_batch);
    i_tprime_.update(i_tprime_batch);
    m.I_T_ema = i_t_.ema_value;
    m.I_Tprime_ema = i_tprime_.ema_value;
    update_controllers(controller_, mode_, i_t_.ema_value, i_tprime_.ema_value);

    if (!std::isfinite(m.L) || !std::isfinite(m.classifier_loss_T) ||
        !std::isfinite(m.classifier_loss_Tprime))
      throw TrainingError(long(m.step), "non-finite loss; last metrics: " + m.to_json().dump());
    return m;
  }

  StepMetrics train_step(std::int64_t step) {
    return train_step(step, sample_step_batch(step), make_step_noise(step),
                      make_step_pairing(step));
  }

  Model<Real>& model() { return model_; }
  Classifier<Real>& classifier() { return classifier_; }
  Classifier<Real>& monitor() { return monitor_; }
  DualControllerState& controller() { return controller_; }
  const MiEstimate& i_t() const { return i_t_; }
  const MiEstimate& i_tprime() const { return i_tprime_; }
  const TrainConfig& config() const { return cfg_; }
  AblationMode mode() const { return mode_; }
  const FactorSplit& split() const { return split_; }

  // Model, classifier, then monitor: the canonical checkpoint order.
  std::vector<Param<Real>*> all_params() {
    auto out = model_.params();
    for (auto* p : classifier_.params()) out.push_back(p);
    for (auto* p : monitor_.params()) out.push_back(p);
    return out;
  }

  CheckpointMeta meta(std::int64_t completed_steps) const {
    CheckpointMeta meta;
    meta.config = cfg_;
    meta.step = completed_steps;
    meta.controller = controller_;
    meta.i_t = i_t_;
    meta.i_tprime = i_tprime_;
    meta.opt_generator_steps = opt_generator_->step_count();
    meta.opt_classifier_steps = opt_classifier_->step_count();
    meta.opt_monitor_steps = opt_monitor_->step_count();
    return meta;
  }

  // Parameters are restored separately via load_checkpoint on all_params().
  void restore(const CheckpointMeta& meta) {
    controller_ = meta.controller;
    i_t_ = meta.i_t;
    i_tprime_ = meta.i_tprime;
    opt_generator_->set_step_count(meta.opt_generator_steps);
    opt_classifier_->set_step_count(meta.opt_classifier_steps);
    opt_monitor_->set_step_count(meta.opt_monitor_steps);
  }

 private:
  static double mean_of(const std::vector<Real>& v) {
    double acc = 0.0;
    for (Real x : v) acc += double(x);
    return acc / double(v.size());
  }

  TrainConfig cfg_;
  AblationMode mode_;
  Model<Real> model_;
  Classifier<Real> classifier_, monitor_;
  DualControllerState controller_;
  FactorSplit split_;
  MiEstimate i_t_, i_tprime_;
  std::unique_ptr<Adam<Real>> opt_generator_, opt_classifier_, opt_monitor_;
};

struct RunHooks {
  std::function<void(const StepMetrics&)> on_metrics;
  std::function<void(std::int64_t completed_steps)> on_checkpoint;
};

// Executes steps [start_step, total_steps); fires the checkpoint hook at
// every interval boundary and after the final step.
template <typename Real>
void run_training(Trainer<Real>& trainer, std::int64_t start_step, const RunHooks& hooks) {
  const auto& cfg = trainer.config();
  for (std::int64_t s = start_step; s < cfg.total_steps; ++s) {
    StepMetrics m = trainer.train_step(s);
    if (hooks.on_metrics) hooks.on_metrics(m);
    const std::int64_t done = s + 1;
    if (hooks.on_checkpoint &&
        (done % cfg.checkpoint_interval == 0 || done == cfg.total_steps))
      hooks.on_checkpoint(done);
  }
}

}  // namespace disent

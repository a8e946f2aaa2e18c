// Constrained-optimization machinery: the piecewise penalty on the MI
// estimate, the multiplier update, and the adaptive KL weight driven by the
// gap between the co-trained and the training classifier.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "disent/errors.hpp"

namespace disent {

// Run-level training variants. Letters are the CLI / config spelling.
enum class AblationMode {
  variational_only,  // a: KL weight only, driven by the monitor estimate
  adversarial_only,  // b: penalty only, KL weight pinned at 0
  no_gap_bias,       // c: full method with the gap deadband removed
  fixed_unit,        // d: full method with KL weight pinned at 1
  full,              // e
};

inline AblationMode parse_ablation_mode(const std::string& s) {
  if (s == "a") return AblationMode::variational_only;
  if (s == "b") return AblationMode::adversarial_only;
  if (s == "c") return AblationMode::no_gap_bias;
  if (s == "d") return AblationMode::fixed_unit;
  if (s == "e") return AblationMode::full;
  throw ConfigError("unknown ablation mode '" + s + "' (expected one of a..e)");
}

inline std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::variational_only: return "a";
    case AblationMode::adversarial_only: return "b";
    case AblationMode::no_gap_bias: return "c";
    case AblationMode::fixed_unit: return "d";
    case AblationMode::full: return "e";
  }
  throw ConfigError("invalid ablation mode value");
}

// The penalty term uses the MI estimate; the KL weight gamma multiplies the
// variational bound. All values in nats.
struct DualControllerState {
  double lambda = 0.0;
  double gamma = 0.0;
  double mu = 0.1;
  double epsilon = 0.125;
  double l_gamma = 0.01;
  double b_gamma = 0.01;
};

// Augmented-Lagrangian penalty for the constraint I <= epsilon. Quadratic
// where the constraint is active or recently violated, constant once the
// multiplier would be driven negative; C1-continuous at the seam.
inline double loss_mi(double i_t, const DualControllerState& s) {
  const double d = i_t - s.epsilon;
  if (d >= -s.lambda / s.mu) return s.lambda * d + 0.5 * s.mu * d * d;
  return -s.lambda * s.lambda / (2.0 * s.mu);
}

inline double dloss_mi_di(double i_t, const DualControllerState& s) {
  return std::max(0.0, s.lambda + s.mu * (i_t - s.epsilon));
}

inline double updated_lambda(const DualControllerState& s, double i_t) {
  return std::max(0.0, s.lambda + s.mu * (i_t - s.epsilon));
}

// Raise gamma while the monitor classifier sees more information than the
// training classifier reports (the training one is being overpowered), decay
// it once the gap falls below the deadband.
inline double updated_gamma(const DualControllerState& s, double i_t, double i_tprime) {
  return std::max(0.0, s.gamma + s.l_gamma * (i_tprime - i_t - s.b_gamma));
}

// Variational-only variant: no penalty term exists, so gamma alone must push
// the monitor estimate down to the constraint level.
inline double updated_gamma_variational(const DualControllerState& s, double i_tprime,
                                        AblationMode mode) {
  if (mode != AblationMode::variational_only)
    throw ConfigError("variational gamma update is only valid in ablation mode a");
  return std::max(0.0, s.gamma + s.l_gamma * (i_tprime - s.epsilon));
}

inline bool uses_mi_loss(AblationMode m) { return m != AblationMode::variational_only; }
inline bool uses_kl_term(AblationMode m) { return m != AblationMode::adversarial_only; }

// Initial state for a run: mode c removes the deadband, mode d pins the KL
// weight at one.
inline DualControllerState make_controller_state(AblationMode mode, double mu, double epsilon,
                                                 double l_gamma, double b_gamma) {
  if (mu <= 0.0) throw ConfigError("penalty parameter mu must be positive");
  DualControllerState s;
  s.mu = mu;
  s.epsilon = epsilon;
  s.l_gamma = l_gamma;
  s.b_gamma = b_gamma;
  if (mode == AblationMode::no_gap_bias) s.b_gamma = 0.0;
  if (mode == AblationMode::fixed_unit) s.gamma = 1.0;
  return s;
}

// Per-step controller update, applied after the generative optimizer step
// using the EMA estimates current at that step.
inline void update_controllers(DualControllerState& s, AblationMode mode, double i_t_ema,
                               double i_tprime_ema) {
  if (uses_mi_loss(mode)) s.lambda = updated_lambda(s, i_t_ema);
  switch (mode) {
    case AblationMode::variational_only:
      s.gamma = updated_gamma_variational(s, i_tprime_ema, mode);
      break;
    case AblationMode::adversarial_only:
      s.gamma = 0.0;
      break;
    case AblationMode::fixed_unit:
      s.gamma = 1.0;
      break;
    case AblationMode::no_gap_bias:
    case AblationMode::full:
      s.gamma = updated_gamma(s, i_t_ema, i_tprime_ema);
      break;
  }
}

}  // namespace disent

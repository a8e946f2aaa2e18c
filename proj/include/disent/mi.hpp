// Mutual information machinery: the analytic KL bound on the pose posterior
// and the density-ratio classifier estimate with its EMA tracker.
#pragma once

#include <cmath>
#include <vector>

#include "disent/networks.hpp"
#include "disent/optimizer.hpp"
#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

template <typename Real>
Real stable_softplus(Real x) {
  return std::max(x, Real(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Real>
Real sigmoid(Real x) {
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

// KL(N(m, I) || N(0, I)) = ½‖m‖², averaged over the batch, summed over all
// code dimensions. Valid because both sides have unit variance.
template <typename Real>
Real kl_to_standard_prior(const Tensor<Real>& mean) {
  double acc = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) acc += double(mean.data[i]) * mean.data[i];
  return Real(0.5 * acc / mean.b);
}

// d/dm of the batch-mean KL: m_i / B.
template <typename Real>
Tensor<Real> kl_to_standard_prior_grad(const Tensor<Real>& mean) {
  Tensor<Real> g = Tensor<Real>::zeros_like(mean);
  const Real inv_b = Real(1) / Real(mean.b);
  for (std::size_t i = 0; i < mean.size(); ++i) g.data[i] = mean.data[i] * inv_b;
  return g;
}

// Density-ratio MI estimate at the converged classifier: the mean raw logit
// over joint pairs, smoothed by an EMA for the controllers.
struct MiEstimate {
  double batch_value = 0.0;
  double ema_value = 0.0;
  double ema_decay = 0.99;
  bool warm = false;

  void update(double batch) {
    batch_value = batch;
    if (!warm) {
      ema_value = batch;
      warm = true;
    } else {
      ema_value = ema_decay * ema_value + (1.0 - ema_decay) * batch;
    }
  }
};

// Binary cross-entropy between joint pairs (label 1) and marginal pairs
// (label 0): −E_joint[log σ(T)] − E_marg[log(1−σ(T))]. Gradients are with
// respect to the raw logits.
template <typename Real>
struct ClassifierLoss {
  Real loss = 0;
  Real joint_logit_mean = 0;
  std::vector<Real> djoint, dmarginal;
};

template <typename Real>
ClassifierLoss<Real> classifier_loss_and_grads(const std::vector<Real>& joint_logits,
                                               const std::vector<Real>& marginal_logits) {
  if (joint_logits.empty() || marginal_logits.empty())
    throw ValidationError("classifier loss needs non-empty joint and marginal batches");
  ClassifierLoss<Real> out;
  out.djoint.resize(joint_logits.size());
  out.dmarginal.resize(marginal_logits.size());
  double loss = 0.0, lmean = 0.0;
  const Real inv_j = Real(1) / Real(joint_logits.size());
  for (std::size_t i = 0; i < joint_logits.size(); ++i) {
    const Real l = joint_logits[i];
    loss += double(stable_softplus(-l)) / joint_logits.size();
    lmean += double(l) / joint_logits.size();
    out.djoint[i] = (sigmoid(l) - Real(1)) * inv_j;
  }
  const Real inv_m = Real(1) / Real(marginal_logits.size());
  for (std::size_t i = 0; i < marginal_logits.size(); ++i) {
    const Real l = marginal_logits[i];
    loss += double(stable_softplus(l)) / marginal_logits.size();
    out.dmarginal[i] = sigmoid(l) * inv_m;
  }
  out.loss = Real(loss);
  out.joint_logit_mean = Real(lmean);
  return out;
}

// Random derangement pairing pose_i with app_{perm[i]}; no fixed point, so
// every marginal pair mixes two different images.
inline std::vector<int> make_marginal_pairs(int batch, Rng& rng) {
  return rng.derangement(batch);
}

// MI of a bivariate unit Gaussian with correlation rho, in nats.
inline double gaussian_mi_oracle(double rho) {
  if (!(std::abs(rho) < 1.0))
    throw ValidationError("gaussian_mi_oracle: |rho| must be < 1");
  return -0.5 * std::log1p(-rho * rho);
}

template <typename Real>
struct ClassifierStepResult {
  Real loss = 0;
  Real joint_logit_mean = 0;
};

// One discriminator update on detached codes: branch forward, pair loss,
// backward into branch weights only, Adam step. Codes are plain tensors with
// no path back to the encoders, so detachment is structural.
template <typename Real>
ClassifierStepResult<Real> train_classifier_step(Classifier<Real>& clf, Adam<Real>& opt,
                                                 const Tensor<Real>& pose_codes,
                                                 const Tensor<Real>& app_codes,
                                                 const std::vector<int>& marginal_pairing,
                                                 Real lr) {
  clf.forward_features(pose_codes, app_codes);
  const std::vector<Real> joint = clf.logits();
  const std::vector<Real> marg = clf.logits(marginal_pairing);
  ClassifierLoss<Real> cl = classifier_loss_and_grads(joint, marg);

  std::vector<typename Classifier<Real>::PairGrad> grads;
  grads.reserve(joint.size() + marg.size());
  for (int i = 0; i < int(joint.size()); ++i)
    grads.push_back({i, i, cl.djoint[i]});
  for (int i = 0; i < int(marg.size()); ++i)
    grads.push_back({i, marginal_pairing[i], cl.dmarginal[i]});

  opt.zero_grad();
  clf.backward(grads, {.want_dpose = false, .want_dapp = false, .accum_wgrad = true});
  opt.step(lr);
  return {cl.loss, cl.joint_logit_mean};
}

}  // namespace disent

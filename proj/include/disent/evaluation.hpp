// Post-training diagnostics: triplet transfer error distributions, the
// entanglement probe (a fresh pair classifier trained on frozen codes),
// single-factor visualization decoders, transfer grids, and the ablation
// table driver.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "disent/image_io.hpp"
#include "disent/mi.hpp"
#include "disent/networks.hpp"
#include "disent/optimizer.hpp"
#include "disent/sprites.hpp"
#include "disent/trainer.hpp"

namespace disent {

struct ErrorDistribution {
  std::vector<double> per_triplet_mse;
  double mean = 0, median = 0, p5 = 0, p25 = 0, p75 = 0, p95 = 0;

  void summarize() {
    if (per_triplet_mse.empty()) throw ValidationError("empty error distribution");
    std::vector<double> sorted = per_triplet_mse;
    std::sort(sorted.begin(), sorted.end());
    double acc = 0.0;
    for (double v : sorted) acc += v;
    mean = acc / sorted.size();
    auto pct = [&](double q) {
      const double pos = q * (sorted.size() - 1);
      const std::size_t lo = std::size_t(pos);
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      const double frac = pos - double(lo);
      return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    };
    p5 = pct(0.05);
    p25 = pct(0.25);
    median = pct(0.50);
    p75 = pct(0.75);
    p95 = pct(0.95);
  }
};

struct EntanglementReport {
  double I_T_train_critic = 0;
  double I_T_probe = 0;
  double gap = 0;  // I_T_probe - I_T_train_critic
};

// Mean squared difference per element, one value per batch slot.
template <typename Real>
std::vector<double> per_sample_mse(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "per_sample_mse");
  std::vector<double> out(a.b, 0.0);
  const std::size_t k = a.sample_size();
  for (int i = 0; i < a.b; ++i) {
    const Real* pa = a.sample(i);
    const Real* pb = b.sample(i);
    double acc = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double d = double(pa[t]) - double(pb[t]);
      acc += d * d;
    }
    out[i] = acc / double(k);
  }
  return out;
}

// Pose from x3, appearance from x1; the posterior mean is used so evaluation
// is deterministic.
template <typename Real>
Tensor<Real> model_transfer(Model<Real>& model, const Tensor<Real>& x1, const Tensor<Real>& x3) {
  Tensor<Real> pose = model.encode_pose(x3).mean;
  Tensor<Real> app = model.encode_appearance(x1).feature_map;
  return model.decode(pose, app);
}

template <typename Real>
Tensor<Real> model_reconstruct(Model<Real>& model, const Tensor<Real>& x) {
  Tensor<Real> pose = model.encode_pose(x).mean;
  Tensor<Real> app = model.encode_appearance(x).feature_map;
  return model.decode(pose, app);
}

// `transfer` maps (x1 batch, x3 batch) to predicted x2; the indirection lets
// tests substitute reference models.
template <typename Real, typename TransferFn>
ErrorDistribution triplet_transfer_mse(const TripletBatch<Real>& triplets, TransferFn&& transfer) {
  Tensor<Real> predicted = transfer(triplets.x1, triplets.x3);
  if (!predicted.same_shape(triplets.x2))
    throw ValidationError("transfer output shape " + predicted.shape_str() +
                          " does not match targets " + triplets.x2.shape_str());
  ErrorDistribution dist;
  dist.per_triplet_mse = per_sample_mse(predicted, triplets.x2);
  dist.summarize();
  return dist;
}

struct TransferEvaluation {
  ErrorDistribution transfer;        // decode(pose(x3), appearance(x1)) vs x2
  ErrorDistribution reconstruction;  // decode(pose(x2), appearance(x2)) vs x2
};

// Streams n held-out triplets in chunks through the model.
template <typename Real>
TransferEvaluation evaluate_transfer(Model<Real>& model, std::uint64_t seed, int n,
                                     const std::vector<AppearanceFactors>& pool,
                                     int chunk = 50) {
  if (n < 1) throw ValidationError("need at least one evaluation triplet");
  TransferEvaluation ev;
  int done = 0, block = 0;
  while (done < n) {
    const int b = std::min(chunk, n - done);
    TripletBatch<Real> t = sample_triplet_batch<Real>(mix_seed(seed, 0x7E57, block), b,
                                                      model.resolution(), pool);
    Tensor<Real> moved = model_transfer(model, t.x1, t.x3);
    for (double v : per_sample_mse(moved, t.x2)) ev.transfer.per_triplet_mse.push_back(v);
    Tensor<Real> recon = model_reconstruct(model, t.x2);
    for (double v : per_sample_mse(recon, t.x2)) ev.reconstruction.per_triplet_mse.push_back(v);
    done += b;
    ++block;
  }
  ev.transfer.summarize();
  ev.reconstruction.summarize();
  return ev;
}

struct ProbeOptions {
  std::int64_t steps = 5000;
  int batch = 16;
  std::uint64_t seed = 1;
  int channels = 64;
  int eval_batches = 64;
};

// Trains a fresh pair classifier on a code stream and returns its MI estimate
// on freshly drawn codes. `source(step, b)` must yield (pose, appearance)
// code batches; the stream is consumed once for training, then again past the
// training range for the estimate.
template <typename Real, typename CodeSource>
double train_probe_mi(CodeSource&& source, const ProbeOptions& opt) {
  Classifier<Real> probe("probe", opt.channels);
  Rng init(mix_seed(opt.seed, 0x9B0B));
  probe.init(init);
  Adam<Real> adam(probe.params());

  for (std::int64_t s = 0; s < opt.steps; ++s) {
    auto [pose, app] = source(s, opt.batch);
    Rng prng(mix_seed(opt.seed, std::uint64_t(s), 0x9B0C));
    const auto pairing = make_marginal_pairs(pose.b, prng);
    const Real lr = Real(decayed_lr(1e-3, s, opt.steps));
    auto r = train_classifier_step(probe, adam, pose, app, pairing, lr);
    if (!std::isfinite(double(r.loss)))
      throw TrainingError(long(s), "probe loss diverged");
  }

  double estimate = 0.0;
  for (int e = 0; e < opt.eval_batches; ++e) {
    auto [pose, app] = source(opt.steps + e, opt.batch);
    probe.forward_features(pose, app);
    double acc = 0.0;
    for (Real l : probe.logits()) acc += double(l);
    estimate += acc / (double(pose.b) * opt.eval_batches);
  }
  return estimate;
}

// Code stream drawn from the model on sampled appearance-matched pairs. The
// pose code is reparameterized exactly as in training, since that is the code
// the information constraint governs.
template <typename Real>
auto model_code_source(Model<Real>& model, const std::vector<AppearanceFactors>& pool,
                       std::uint64_t seed) {
  return [&model, &pool, seed](std::int64_t step, int batch) {
    PairBatch<Real> pair = sample_pair_batch<Real>(mix_seed(seed, std::uint64_t(step), 0x9B0D),
                                                   batch, model.resolution(), pool);
    PosteriorGaussian<Real> post = model.encode_pose(pair.x2);
    Rng nrng(mix_seed(seed, std::uint64_t(step), 0x9B0E));
    Tensor<Real> noise = Tensor<Real>::zeros_like(post.mean);
    nrng.fill_normal(noise.data.data(), noise.size());
    Tensor<Real> pose = reparameterize(post, noise);
    Tensor<Real> app = model.encode_appearance(pair.x1).feature_map;
    return std::make_pair(std::move(pose), std::move(app));
  };
}

template <typename Real>
EntanglementReport probe_entanglement(Model<Real>& model, double i_t_train_critic,
                                      const std::vector<AppearanceFactors>& pool,
                                      const ProbeOptions& opt) {
  EntanglementReport rep;
  rep.I_T_train_critic = i_t_train_critic;
  rep.I_T_probe = train_probe_mi<Real>(model_code_source(model, pool, opt.seed), opt);
  rep.gap = rep.I_T_probe - rep.I_T_train_critic;
  return rep;
}

// Decoder over a single 16-channel code, for the factor-marginalization
// visualizations: four res blocks then the standard upsampling trunk.
template <typename Real>
class SingleCodeDecoder {
 public:
  explicit SingleCodeDecoder(int resolution)
      : resolution_(resolution),
        stack_("marginal.stack", parse_block_specs("res,res,res,res"), kCodeChannels),
        trunk_("marginal.trunk", decoder_trunk_spec(resolution), kCodeChannels) {}

  void init(Rng& rng) {
    stack_.init(rng);
    trunk_.init(rng);
  }

  Tensor<Real> forward(const Tensor<Real>& code) {
    return trunk_.forward(stack_.forward(code));
  }

  Tensor<Real> backward(const Tensor<Real>& dout) {
    return stack_.backward(trunk_.backward(dout));
  }

  std::vector<Param<Real>*> params() {
    auto out = stack_.params();
    for (auto* p : trunk_.params()) out.push_back(p);
    return out;
  }

  int resolution() const { return resolution_; }

 private:
  int resolution_;
  Sequential<Real> stack_, trunk_;
};

enum class MarginalFactor { pose, appearance };

inline MarginalFactor parse_marginal_factor(const std::string& s) {
  if (s == "pose") return MarginalFactor::pose;
  if (s == "appearance") return MarginalFactor::appearance;
  throw ConfigError("unknown factor '" + s + "' (expected pose or appearance)");
}

struct MarginalTrainOptions {
  std::int64_t steps = 2000;
  int batch = 16;
  std::uint64_t seed = 1;
  double learning_rate = 2e-4;
};

// `source(step, b)` yields (code batch, target image batch); the decoder
// learns the conditional mean given that single code.
template <typename Real, typename BatchSource>
SingleCodeDecoder<Real> train_marginal_decoder_fn(int resolution, BatchSource&& source,
                                                  const MarginalTrainOptions& opt) {
  SingleCodeDecoder<Real> dec(resolution);
  Rng init(mix_seed(opt.seed, 0x3A36));
  dec.init(init);
  Adam<Real> adam(dec.params());
  for (std::int64_t s = 0; s < opt.steps; ++s) {
    auto [codes, targets] = source(s, opt.batch);
    Tensor<Real> out = dec.forward(codes);
    const Real loss = reconstruction_loss(targets, out);
    if (!std::isfinite(double(loss)))
      throw TrainingError(long(s), "marginal decoder loss diverged");
    adam.zero_grad();
    dec.backward(reconstruction_loss_grad(targets, out));
    adam.step(Real(decayed_lr(opt.learning_rate, s, opt.steps)));
  }
  return dec;
}

// Model-bound variant: pose codes predict the pose source image, appearance
// codes predict the appearance source image.
template <typename Real>
SingleCodeDecoder<Real> train_marginal_decoder(Model<Real>& model, MarginalFactor factor,
                                               const std::vector<AppearanceFactors>& pool,
                                               const MarginalTrainOptions& opt) {
  auto source = [&model, &pool, factor, opt](std::int64_t step, int b) {
    PairBatch<Real> pair = sample_pair_batch<Real>(
        mix_seed(opt.seed, std::uint64_t(step), 0x3A37), b, model.resolution(), pool);
    if (factor == MarginalFactor::pose)
      return std::make_pair(model.encode_pose(pair.x2).mean, std::move(pair.x2));
    return std::make_pair(model.encode_appearance(pair.x1).feature_map, std::move(pair.x1));
  };
  return train_marginal_decoder_fn<Real>(model.resolution(), source, opt);
}

// Composite grid: header row holds pose targets, header column appearance
// targets, body cell (i, j) recombines pose target j with appearance target i.
template <typename Real>
Tensor<Real> transfer_grid(Model<Real>& model, const std::vector<Tensor<Real>>& pose_targets,
                           const std::vector<Tensor<Real>>& appearance_targets, int pad = 2) {
  if (pose_targets.empty() || appearance_targets.empty())
    throw ValidationError("transfer grid needs at least one target per axis");
  const int rows = int(appearance_targets.size()) + 1;
  const int cols = int(pose_targets.size()) + 1;
  std::vector<Tensor<Real>> cells(std::size_t(rows) * cols);
  for (int j = 1; j < cols; ++j) cells[j] = pose_targets[j - 1];
  for (int i = 1; i < rows; ++i) cells[std::size_t(i) * cols] = appearance_targets[i - 1];
  for (int i = 1; i < rows; ++i)
    for (int j = 1; j < cols; ++j)
      cells[std::size_t(i) * cols + j] =
          model_transfer(model, appearance_targets[i - 1], pose_targets[j - 1]);
  return compose_grid(cells, rows, cols, pad);
}

struct AblationRow {
  std::string mode;
  bool ok = false;
  std::string error;
  double I_T_ema = 0;
  double I_T_probe = 0;
  double gap = 0;
  double L_rec_test = 0;
};

// Held-out reconstruction loss in the training loss units (half summed
// squared error, batch mean), using posterior means.
template <typename Real>
double test_reconstruction_loss(Model<Real>& model, const std::vector<AppearanceFactors>& pool,
                                std::uint64_t seed, int n, int batch = 50) {
  double acc = 0.0;
  int done = 0, block = 0, batches = 0;
  while (done < n) {
    const int b = std::min(batch, n - done);
    PairBatch<Real> pair = sample_pair_batch<Real>(mix_seed(seed, 0x1EC7, block), b,
                                                   model.resolution(), pool);
    Tensor<Real> pose = model.encode_pose(pair.x2).mean;
    Tensor<Real> app = model.encode_appearance(pair.x1).feature_map;
    Tensor<Real> out = model.decode(pose, app);
    acc += double(reconstruction_loss(pair.x2, out));
    done += b;
    ++block;
    ++batches;
  }
  return acc / batches;
}

// Trains (or loads, through `ensure_trained`) one model per mode with a shared
// seed and reports the Table-style row for each; failures are recorded per
// mode and do not stop the remaining modes.
template <typename Real>
std::vector<AblationRow> run_ablation_suite(
    const TrainConfig& base, const std::vector<std::string>& modes,
    const std::function<void(Trainer<Real>&)>& ensure_trained,
    const ProbeOptions& probe_base = {}) {
  std::vector<AblationRow> rows;
  for (const std::string& mode : modes) {
    AblationRow row;
    row.mode = mode;
    try {
      TrainConfig cfg = base;
      cfg.ablation_mode = mode;
      cfg.validate();
      Trainer<Real> trainer(cfg);
      ensure_trained(trainer);
      ProbeOptions popt = probe_base;
      popt.channels = cfg.resolved_classifier_channels();
      popt.seed = mix_seed(cfg.seed, 0x9B0F);
      EntanglementReport rep = probe_entanglement(trainer.model(), trainer.i_t().ema_value,
                                                  trainer.split().test, popt);
      row.I_T_ema = rep.I_T_train_critic;
      row.I_T_probe = rep.I_T_probe;
      row.gap = rep.gap;
      row.L_rec_test = test_reconstruction_loss(trainer.model(), trainer.split().test,
                                                mix_seed(cfg.seed, 0x1EC8), 800);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace disent

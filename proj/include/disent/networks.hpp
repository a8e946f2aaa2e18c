// Model components: pose/appearance encoders, the recombining decoder, and
// the pair classifiers with an inner-product head.
#pragma once

#include <string>
#include <vector>

#include "disent/layers.hpp"
#include "disent/tensor.hpp"

namespace disent {

inline constexpr int kCodeChannels = 16;

// Mean of p(pi | x2); the variance is fixed at 1 everywhere and never learned.
template <typename Real>
struct PosteriorGaussian {
  Tensor<Real> mean;
};

// Deterministic appearance code.
template <typename Real>
struct EncoderOutput {
  Tensor<Real> feature_map;
};

inline std::vector<BlockSpec> encoder_spec(int resolution) {
  switch (resolution) {
    case 32:
      return parse_block_specs(
          "conv(16),res,down(32),res,down(64),res,down(128),res,res,res,act,conv(16)");
    case 64:
      return parse_block_specs(
          "conv(16),res,down(32),res,down(64),res,down(128),res,down(256),"
          "res,res,res,res,res,act,conv(16)");
    default:
      throw ConfigError("unsupported resolution: " + std::to_string(resolution));
  }
}

inline std::vector<BlockSpec> decoder_trunk_spec(int resolution) {
  switch (resolution) {
    case 32:
      return parse_block_specs("conv(128),res,up(64),res,up(32),res,up(16),res,conv(3)");
    case 64:
      return parse_block_specs("conv(256),res,up(128),res,up(64),res,up(32),res,up(16),res,conv(3)");
    default:
      throw ConfigError("unsupported resolution: " + std::to_string(resolution));
  }
}

inline std::vector<BlockSpec> classifier_branch_spec(int channels) {
  return parse_block_specs("conv(" + std::to_string(channels) + "),res,res,res,res,act,conv(" +
                           std::to_string(channels) + ")");
}

// Spatial extent of the 16-channel code for a given input resolution.
inline int code_extent(int resolution) {
  switch (resolution) {
    case 32: return 4;   // three stride-2 blocks
    case 64: return 4;   // four stride-2 blocks
    default: throw ConfigError("unsupported resolution: " + std::to_string(resolution));
  }
}

template <typename Real>
class Encoder {
 public:
  Encoder(const std::string& name, int resolution)
      : resolution_(resolution), net_(name, encoder_spec(resolution), 3) {}

  void init(Rng& rng) { net_.init(rng); }

  Tensor<Real> forward(const Tensor<Real>& x) {
    if (x.h != resolution_ || x.w != resolution_ || x.c != 3)
      throw ConfigError("encoder built for " + std::to_string(resolution_) + "x" +
                        std::to_string(resolution_) + "x3, got " + x.shape_str());
    return net_.forward(x);
  }

  // Accumulates parameter gradients; the image gradient is not needed.
  void backward(const Tensor<Real>& dcode) { net_.backward(dcode, {.want_dx = false}); }

  std::vector<Param<Real>*> params() { return net_.params(); }
  const std::string& spec() const { return net_.spec(); }
  int resolution() const { return resolution_; }

 private:
  int resolution_;
  Sequential<Real> net_;
};

namespace detail {

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.b != b.b || a.h != b.h || a.w != b.w)
    throw ValidationError("concat: spatial shapes differ, " + a.shape_str() + " vs " +
                          b.shape_str());
  Tensor<Real> out(a.b, a.h, a.w, a.c + b.c);
  const std::size_t pixels = std::size_t(a.b) * a.h * a.w;
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy(a.data.data() + p * a.c, a.data.data() + (p + 1) * a.c, out.data.data() + p * out.c);
    std::copy(b.data.data() + p * b.c, b.data.data() + (p + 1) * b.c,
              out.data.data() + p * out.c + a.c);
  }
  return out;
}

template <typename Real>
void split_channels(const Tensor<Real>& joined, Tensor<Real>& a, Tensor<Real>& b, int ca) {
  a = Tensor<Real>(joined.b, joined.h, joined.w, ca);
  b = Tensor<Real>(joined.b, joined.h, joined.w, joined.c - ca);
  const std::size_t pixels = std::size_t(joined.b) * joined.h * joined.w;
  for (std::size_t p = 0; p < pixels; ++p) {
    const Real* src = joined.data.data() + p * joined.c;
    std::copy(src, src + ca, a.data.data() + p * ca);
    std::copy(src + ca, src + joined.c, b.data.data() + p * b.c);
  }
}

}  // namespace detail

// Each code runs through its own stack of four res blocks, the results are
// channel-concatenated and fed to the upsampling trunk.
template <typename Real>
class Decoder {
 public:
  Decoder(const std::string& name, int resolution)
      : pose_stack_(name + ".pose_stack", parse_block_specs("res,res,res,res"), kCodeChannels),
        app_stack_(name + ".app_stack", parse_block_specs("res,res,res,res"), kCodeChannels),
        trunk_(name + ".trunk", decoder_trunk_spec(resolution), 2 * kCodeChannels) {}

  void init(Rng& rng) {
    pose_stack_.init(rng);
    app_stack_.init(rng);
    trunk_.init(rng);
  }

  Tensor<Real> forward(const Tensor<Real>& pose_code, const Tensor<Real>& app_code) {
    if (pose_code.c != kCodeChannels || app_code.c != kCodeChannels)
      throw ValidationError("decoder expects " + std::to_string(kCodeChannels) +
                            "-channel codes");
    Tensor<Real> p = pose_stack_.forward(pose_code);
    Tensor<Real> a = app_stack_.forward(app_code);
    return trunk_.forward(detail::concat_channels(p, a));
  }

  // Returns (d pose_code, d app_code).
  std::pair<Tensor<Real>, Tensor<Real>> backward(const Tensor<Real>& dout) {
    Tensor<Real> djoined = trunk_.backward(dout);
    Tensor<Real> dp, da;
    detail::split_channels(djoined, dp, da, kCodeChannels);
    return {pose_stack_.backward(dp), app_stack_.backward(da)};
  }

  std::vector<Param<Real>*> params() {
    auto out = pose_stack_.params();
    for (auto* p : app_stack_.params()) out.push_back(p);
    for (auto* p : trunk_.params()) out.push_back(p);
    return out;
  }

  std::string spec() const { return trunk_.spec(); }

 private:
  Sequential<Real> pose_stack_, app_stack_, trunk_;
};

struct ClassifierBackwardOpts {
  bool want_dpose = false;
  bool want_dapp = false;
  bool accum_wgrad = true;
};

// Pair classifier: two independent branch networks, per-sample logit is the
// inner product of the two branch feature maps over all positions and
// channels. The branches never share weights.
template <typename Real>
class Classifier {
 public:
  Classifier(const std::string& name, int channels, int in_channels = kCodeChannels)
      : channels_(channels),
        pose_branch_(name + ".pose_branch", classifier_branch_spec(channels), in_channels),
        app_branch_(name + ".app_branch", classifier_branch_spec(channels), in_channels) {}

  void init(Rng& rng) {
    pose_branch_.init(rng);
    app_branch_.init(rng);
  }

  // Runs both branches and caches the feature maps for logit evaluation and
  // for a subsequent backward pass.
  void forward_features(const Tensor<Real>& pose_code, const Tensor<Real>& app_code) {
    if (pose_code.b != app_code.b)
      throw ValidationError("classifier: batch mismatch " + pose_code.shape_str() + " vs " +
                            app_code.shape_str());
    fpose_ = pose_branch_.forward(pose_code);
    fapp_ = app_branch_.forward(app_code);
  }

  // Logits for pairs (pose_i, app_{pairing[i]}); empty pairing = aligned pairs.
  std::vector<Real> logits(const std::vector<int>& pairing = {}) const {
    const int n = fpose_.b;
    std::vector<Real> out(n);
    const std::size_t k = fpose_.sample_size();
    for (int i = 0; i < n; ++i) {
      const int j = pairing.empty() ? i : pairing[i];
      const Real* pi = fpose_.sample(i);
      const Real* aj = fapp_.sample(j);
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += double(pi[t]) * double(aj[t]);
      out[i] = Real(acc);
    }
    return out;
  }

  // Backward from per-pair logit gradients. Each entry is (i, j, dlogit) for
  // the pair (pose_i, app_j); contributions accumulate over repeated indices.
  struct PairGrad {
    int pose_index, app_index;
    Real dlogit;
  };

  std::pair<Tensor<Real>, Tensor<Real>> backward(const std::vector<PairGrad>& grads,
                                                 const ClassifierBackwardOpts& opts) {
    Tensor<Real> dfpose = Tensor<Real>::zeros_like(fpose_);
    Tensor<Real> dfapp = Tensor<Real>::zeros_like(fapp_);
    const std::size_t k = fpose_.sample_size();
    for (const auto& g : grads) {
      const Real* fa = fapp_.sample(g.app_index);
      const Real* fp = fpose_.sample(g.pose_index);
      Real* dp = dfpose.sample(g.pose_index);
      Real* da = dfapp.sample(g.app_index);
      for (std::size_t t = 0; t < k; ++t) {
        dp[t] += g.dlogit * fa[t];
        da[t] += g.dlogit * fp[t];
      }
    }
    BackwardOpts bo{.want_dx = opts.want_dpose, .accum_wgrad = opts.accum_wgrad};
    Tensor<Real> dpose = pose_branch_.backward(dfpose, bo);
    bo.want_dx = opts.want_dapp;
    Tensor<Real> dapp = app_branch_.backward(dfapp, bo);
    return {std::move(dpose), std::move(dapp)};
  }

  std::vector<Param<Real>*> params() {
    auto out = pose_branch_.params();
    for (auto* p : app_branch_.params()) out.push_back(p);
    return out;
  }

  int channels() const { return channels_; }
  const Tensor<Real>& pose_features() const { return fpose_; }
  const Tensor<Real>& app_features() const { return fapp_; }

 private:
  int channels_;
  Sequential<Real> pose_branch_, app_branch_;
  Tensor<Real> fpose_, fapp_;
};

// The generative triple (E_pi, E_alpha, D).
template <typename Real>
class Model {
 public:
  explicit Model(int resolution)
      : resolution_(resolution),
        pose_encoder_("pose_encoder", resolution),
        app_encoder_("appearance_encoder", resolution),
        decoder_("decoder", resolution) {}

  void init(std::uint64_t seed) {
    Rng r0(mix_seed(seed, 0x01));
    Rng r1(mix_seed(seed, 0x02));
    Rng r2(mix_seed(seed, 0x03));
    pose_encoder_.init(r0);
    app_encoder_.init(r1);
    decoder_.init(r2);
  }

  PosteriorGaussian<Real> encode_pose(const Tensor<Real>& x2) {
    return {pose_encoder_.forward(x2)};
  }
  EncoderOutput<Real> encode_appearance(const Tensor<Real>& x1) {
    return {app_encoder_.forward(x1)};
  }
  Tensor<Real> decode(const Tensor<Real>& pose_code, const Tensor<Real>& app_code) {
    return decoder_.forward(pose_code, app_code);
  }

  Encoder<Real>& pose_encoder() { return pose_encoder_; }
  Encoder<Real>& app_encoder() { return app_encoder_; }
  Decoder<Real>& decoder() { return decoder_; }
  int resolution() const { return resolution_; }

  std::vector<Param<Real>*> params() {
    auto out = pose_encoder_.params();
    for (auto* p : app_encoder_.params()) out.push_back(p);
    for (auto* p : decoder_.params()) out.push_back(p);
    return out;
  }

 private:
  int resolution_;
  Encoder<Real> pose_encoder_, app_encoder_;
  Decoder<Real> decoder_;
};

}  // namespace disent

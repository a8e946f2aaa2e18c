// Network building blocks: 3x3 convolutions (as im2col + GEMM), subpixel
// upsampling, ReLU and residual blocks, composed through block-spec strings.
#pragma once

#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

// A learnable array with its gradient and Adam moment buffers.
template <typename Real>
struct Param {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<Real> value, grad, adam_m, adam_v;

  void resize(const std::string& n, int r, int c) {
    name = n;
    rows = r;
    cols = c;
    const std::size_t sz = std::size_t(r) * c;
    value.assign(sz, Real(0));
    grad.assign(sz, Real(0));
    adam_m.assign(sz, Real(0));
    adam_v.assign(sz, Real(0));
  }
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }
};

struct BackwardOpts {
  bool want_dx = true;       // propagate gradient to the layer input
  bool accum_wgrad = true;   // accumulate parameter gradients (off = frozen weights)
};

template <typename Real>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<Real> forward(const Tensor<Real>& x) = 0;
  virtual Tensor<Real> backward(const Tensor<Real>& dy, const BackwardOpts& opts) = 0;
  virtual void collect_params(std::vector<Param<Real>*>& out) {}
  virtual int out_channels(int in_channels) const = 0;
};

// 3x3 convolution, zero padding 1, stride 1 or 2. Weight layout (9*cin, cout)
// with rows ordered (ky, kx, cin); forward is one batched im2col GEMM.
template <typename Real>
class Conv3x3 : public Layer<Real> {
 public:
  Conv3x3(const std::string& name, int cin, int cout, int stride = 1)
      : cin_(cin), cout_(cout), stride_(stride) {
    weight_.resize(name + ".w", 9 * cin, cout);
    bias_.resize(name + ".b", 1, cout);
  }

  void init(Rng& rng) {
    const double stddev = std::sqrt(2.0 / (9.0 * cin_));
    rng.fill_normal(weight_.value.data(), weight_.size(), stddev);
    std::fill(bias_.value.begin(), bias_.value.end(), Real(0));
  }

  Tensor<Real> forward(const Tensor<Real>& x) override {
    if (x.c != cin_)
      throw ValidationError(weight_.name + ": expected " + std::to_string(cin_) +
                            " input channels, got " + std::to_string(x.c));
    in_b_ = x.b;
    in_h_ = x.h;
    in_w_ = x.w;
    oh_ = (x.h + 2 - 3) / stride_ + 1;
    ow_ = (x.w + 2 - 3) / stride_ + 1;
    im2col(x);

    Tensor<Real> y(x.b, oh_, ow_, cout_);
    const std::ptrdiff_t m = std::ptrdiff_t(x.b) * oh_ * ow_;
    ConstMatMap<Real> p(patches_.data(), m, 9 * cin_);
    ConstMatMap<Real> wmat(weight_.value.data(), 9 * cin_, cout_);
    MatMap<Real> ymat(y.data.data(), m, cout_);
    ymat.noalias() = p * wmat;
    ymat.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(
        bias_.value.data(), cout_);
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& dy, const BackwardOpts& opts) override {
    const std::ptrdiff_t m = std::ptrdiff_t(in_b_) * oh_ * ow_;
    ConstMatMap<Real> dymat(dy.data.data(), m, cout_);
    if (opts.accum_wgrad) {
      ConstMatMap<Real> p(patches_.data(), m, 9 * cin_);
      MatMap<Real> dw(weight_.grad.data(), 9 * cin_, cout_);
      dw.noalias() += p.transpose() * dymat;
      Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>> db(bias_.grad.data(), cout_);
      db += dymat.colwise().sum();
    }
    if (!opts.want_dx) return {};

    dpatches_.resize(std::size_t(m) * 9 * cin_);
    MatMap<Real> dp(dpatches_.data(), m, 9 * cin_);
    ConstMatMap<Real> wmat(weight_.value.data(), 9 * cin_, cout_);
    dp.noalias() = dymat * wmat.transpose();

    Tensor<Real> dx(in_b_, in_h_, in_w_, cin_);
    col2im(dx);
    return dx;
  }

  void collect_params(std::vector<Param<Real>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  int out_channels(int) const override { return cout_; }
  Param<Real>& weight() { return weight_; }
  Param<Real>& bias() { return bias_; }

 private:
  void im2col(const Tensor<Real>& x) {
    const int c = cin_;
    patches_.assign(std::size_t(x.b) * oh_ * ow_ * 9 * c, Real(0));
    Real* prow = patches_.data();
    for (int bi = 0; bi < x.b; ++bi) {
      for (int oy = 0; oy < oh_; ++oy) {
        for (int ox = 0; ox < ow_; ++ox, prow += 9 * c) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride_ + ky - 1;
            if (iy < 0 || iy >= x.h) continue;
            const int ix0 = ox * stride_ - 1;
            // contiguous run of valid kx taps
            const int kx_lo = ix0 < 0 ? 1 : 0;
            const int kx_hi = ix0 + 2 >= x.w ? (x.w - ix0 - 1) : 2;
            if (kx_hi < kx_lo) continue;
            const Real* src = &x.at(bi, iy, ix0 + kx_lo, 0);
            std::copy(src, src + (kx_hi - kx_lo + 1) * c, prow + (ky * 3 + kx_lo) * c);
          }
        }
      }
    }
  }

  void col2im(Tensor<Real>& dx) {
    const int c = cin_;
    const Real* prow = dpatches_.data();
    for (int bi = 0; bi < dx.b; ++bi) {
      for (int oy = 0; oy < oh_; ++oy) {
        for (int ox = 0; ox < ow_; ++ox, prow += 9 * c) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride_ + ky - 1;
            if (iy < 0 || iy >= dx.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * stride_ + kx - 1;
              if (ix < 0 || ix >= dx.w) continue;
              Real* dst = &dx.at(bi, iy, ix, 0);
              const Real* src = prow + (ky * 3 + kx) * c;
              for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
          }
        }
      }
    }
  }

  int cin_, cout_, stride_;
  Param<Real> weight_, bias_;
  std::vector<Real> patches_, dpatches_;
  int in_b_ = 0, in_h_ = 0, in_w_ = 0, oh_ = 0, ow_ = 0;
};

// Depth-to-space by a factor of 2: in channel c*4 + dy*2 + dx feeds output
// pixel offset (dy, dx). Pure permutation, so backward is the inverse gather.
template <typename Real>
class PixelShuffle2 : public Layer<Real> {
 public:
  Tensor<Real> forward(const Tensor<Real>& x) override {
    if (x.c % 4 != 0) throw ValidationError("pixel shuffle: channels not divisible by 4");
    in_c_ = x.c;
    Tensor<Real> y(x.b, 2 * x.h, 2 * x.w, x.c / 4);
    const int cq = y.c;
    for (int bi = 0; bi < x.b; ++bi)
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              for (int ch = 0; ch < cq; ++ch)
                y.at(bi, 2 * yy + dy, 2 * xx + dx, ch) = x.at(bi, yy, xx, ch * 4 + dy * 2 + dx);
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& dy, const BackwardOpts& opts) override {
    if (!opts.want_dx) return {};
    Tensor<Real> dx(dy.b, dy.h / 2, dy.w / 2, in_c_);
    const int cq = dy.c;
    for (int bi = 0; bi < dx.b; ++bi)
      for (int yy = 0; yy < dx.h; ++yy)
        for (int xx = 0; xx < dx.w; ++xx)
          for (int dyo = 0; dyo < 2; ++dyo)
            for (int dxo = 0; dxo < 2; ++dxo)
              for (int ch = 0; ch < cq; ++ch)
                dx.at(bi, yy, xx, ch * 4 + dyo * 2 + dxo) =
                    dy.at(bi, 2 * yy + dyo, 2 * xx + dxo, ch);
    return dx;
  }

  int out_channels(int in_channels) const override { return in_channels / 4; }

 private:
  int in_c_ = 0;
};

template <typename Real>
class ReLU : public Layer<Real> {
 public:
  Tensor<Real> forward(const Tensor<Real>& x) override {
    mask_.assign(x.size(), false);
    Tensor<Real> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y.data[i] > Real(0))
        mask_[i] = true;
      else
        y.data[i] = Real(0);
    }
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& dy, const BackwardOpts& opts) override {
    if (!opts.want_dx) return {};
    Tensor<Real> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!mask_[i]) dx.data[i] = Real(0);
    return dx;
  }

  int out_channels(int in_channels) const override { return in_channels; }

 private:
  std::vector<bool> mask_;
};

// y = x + conv3x3(relu(x)), channel preserving.
template <typename Real>
class ResBlock : public Layer<Real> {
 public:
  ResBlock(const std::string& name, int channels) : conv_(name + ".conv", channels, channels) {}

  void init(Rng& rng) { conv_.init(rng); }

  Tensor<Real> forward(const Tensor<Real>& x) override {
    Tensor<Real> y = conv_.forward(relu_.forward(x));
    y.flat() += x.flat();
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& dy, const BackwardOpts& opts) override {
    Tensor<Real> dbranch = conv_.backward(dy, opts);
    if (!opts.want_dx) return {};
    Tensor<Real> dx = relu_.backward(dbranch, opts);
    dx.flat() += dy.flat();
    return dx;
  }

  void collect_params(std::vector<Param<Real>*>& out) override { conv_.collect_params(out); }
  int out_channels(int in_channels) const override { return in_channels; }

 private:
  ReLU<Real> relu_;
  Conv3x3<Real> conv_;
};

// ---------------------------------------------------------------------------
// Block specs
// ---------------------------------------------------------------------------

enum class BlockKind { conv, down, up, res, act };

struct BlockSpec {
  BlockKind kind;
  int filters = 0;  // unused for res/act
};

inline std::string to_string(const BlockSpec& s) {
  switch (s.kind) {
    case BlockKind::conv: return "conv(" + std::to_string(s.filters) + ")";
    case BlockKind::down: return "down(" + std::to_string(s.filters) + ")";
    case BlockKind::up: return "up(" + std::to_string(s.filters) + ")";
    case BlockKind::res: return "res";
    case BlockKind::act: return "act";
  }
  return "?";
}

inline std::string to_string(const std::vector<BlockSpec>& specs) {
  std::string out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i) out += ",";
    out += to_string(specs[i]);
  }
  return out;
}

// Parses "conv(16),res,down(32),act" style descriptors.
inline std::vector<BlockSpec> parse_block_specs(const std::string& text) {
  std::vector<BlockSpec> specs;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    // trim
    const auto l = tok.find_first_not_of(" \t");
    const auto r = tok.find_last_not_of(" \t");
    if (l == std::string::npos) continue;
    tok = tok.substr(l, r - l + 1);
    if (tok == "res") {
      specs.push_back({BlockKind::res});
    } else if (tok == "act") {
      specs.push_back({BlockKind::act});
    } else {
      const auto open = tok.find('(');
      if (open == std::string::npos || tok.back() != ')')
        throw ConfigError("bad block spec token: '" + tok + "'");
      const std::string kind = tok.substr(0, open);
      const std::string arg = tok.substr(open + 1, tok.size() - open - 2);
      int n = 0;
      std::size_t used = 0;
      try {
        n = std::stoi(arg, &used);
      } catch (const std::exception&) {
        throw ConfigError("bad filter count in '" + tok + "'");
      }
      if (used != arg.size() || n <= 0)
        throw ConfigError("bad filter count in '" + tok + "'");
      if (kind == "conv")
        specs.push_back({BlockKind::conv, n});
      else if (kind == "down")
        specs.push_back({BlockKind::down, n});
      else if (kind == "up")
        specs.push_back({BlockKind::up, n});
      else
        throw ConfigError("unknown block kind: '" + kind + "'");
    }
  }
  if (specs.empty()) throw ConfigError("empty block spec");
  return specs;
}

// A block-spec chain with explicit forward/backward.
template <typename Real>
class Sequential {
 public:
  Sequential() = default;

  Sequential(const std::string& name, const std::vector<BlockSpec>& specs, int in_channels)
      : spec_(to_string(specs)) {
    int ch = in_channels;
    int idx = 0;
    for (const auto& s : specs) {
      const std::string lname = name + "." + std::to_string(idx++);
      switch (s.kind) {
        case BlockKind::conv:
          layers_.push_back(std::make_unique<Conv3x3<Real>>(lname, ch, s.filters, 1));
          ch = s.filters;
          break;
        case BlockKind::down:
          layers_.push_back(std::make_unique<Conv3x3<Real>>(lname, ch, s.filters, 2));
          ch = s.filters;
          break;
        case BlockKind::up:
          layers_.push_back(std::make_unique<Conv3x3<Real>>(lname, ch, 4 * s.filters, 1));
          layers_.push_back(std::make_unique<PixelShuffle2<Real>>());
          ch = s.filters;
          break;
        case BlockKind::res:
          layers_.push_back(std::make_unique<ResBlock<Real>>(lname, ch));
          break;
        case BlockKind::act:
          layers_.push_back(std::make_unique<ReLU<Real>>());
          break;
      }
    }
    out_channels_ = ch;
  }

  void init(Rng& rng) {
    for (auto& l : layers_) {
      if (auto* c = dynamic_cast<Conv3x3<Real>*>(l.get())) c->init(rng);
      if (auto* r = dynamic_cast<ResBlock<Real>*>(l.get())) r->init(rng);
    }
  }

  Tensor<Real> forward(const Tensor<Real>& x) {
    Tensor<Real> cur = x;
    for (auto& l : layers_) cur = l->forward(cur);
    return cur;
  }

  Tensor<Real> backward(const Tensor<Real>& dy, const BackwardOpts& opts = {}) {
    Tensor<Real> cur = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      BackwardOpts lo = opts;
      lo.want_dx = opts.want_dx || i > 0;  // inner layers always propagate
      cur = layers_[i]->backward(cur, lo);
    }
    return cur;
  }

  std::vector<Param<Real>*> params() {
    std::vector<Param<Real>*> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
  }

  int out_channels() const { return out_channels_; }
  const std::string& spec() const { return spec_; }

 private:
  std::vector<std::unique_ptr<Layer<Real>>> layers_;
  std::string spec_;
  int out_channels_ = 0;
};

}  // namespace disent

// Dense batched image/feature tensor, NHWC layout (channel fastest).
#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "disent/errors.hpp"

namespace disent {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
using MatMap = Eigen::Map<RowMat<Real>>;

template <typename Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;

template <typename Real>
struct Tensor {
  int b = 0, h = 0, w = 0, c = 0;
  std::vector<Real> data;

  Tensor() = default;
  Tensor(int b_, int h_, int w_, int c_)
      : b(b_), h(h_), w(w_), c(c_), data(std::size_t(b_) * h_ * w_ * c_, Real(0)) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  Real& at(int bi, int y, int x, int ch) {
    return data[((std::size_t(bi) * h + y) * w + x) * c + ch];
  }
  const Real& at(int bi, int y, int x, int ch) const {
    return data[((std::size_t(bi) * h + y) * w + x) * c + ch];
  }

  Real* sample(int bi) { return data.data() + std::size_t(bi) * h * w * c; }
  const Real* sample(int bi) const { return data.data() + std::size_t(bi) * h * w * c; }
  std::size_t sample_size() const { return std::size_t(h) * w * c; }

  bool same_shape(const Tensor& o) const { return b == o.b && h == o.h && w == o.w && c == o.c; }

  std::string shape_str() const {
    return std::to_string(b) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
           std::to_string(c);
  }

  // (B*H*W, C) matrix view.
  MatMap<Real> rows() { return MatMap<Real>(data.data(), std::ptrdiff_t(b) * h * w, c); }
  ConstMatMap<Real> rows() const {
    return ConstMatMap<Real>(data.data(), std::ptrdiff_t(b) * h * w, c);
  }

  // Whole buffer as one row vector.
  Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>> flat() {
    return {data.data(), std::ptrdiff_t(data.size())};
  }
  Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>> flat() const {
    return {data.data(), std::ptrdiff_t(data.size())};
  }

  void set_zero() { std::fill(data.begin(), data.end(), Real(0)); }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.b, o.h, o.w, o.c); }
};

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* what) {
  if (!a.same_shape(b))
    throw ValidationError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                          b.shape_str());
}

template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& t) {
  Tensor<To> out(t.b, t.h, t.w, t.c);
  for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = To(t.data[i]);
  return out;
}

}  // namespace disent

// Procedural sprite world. Appearance factors (shape, color, size) and pose
// factors (position, rotation) are disjoint by construction, which makes
// ground-truth transfer triplets available for evaluation.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

struct AppearanceFactors {
  int shape_id = 0;   // 0 circle, 1 square, 2 triangle, 3 cross
  int color_id = 0;   // palette index
  int size_class = 0; // 0 small, 1 medium, 2 large
  bool operator==(const AppearanceFactors&) const = default;
};

struct PoseFactors {
  double x = 0.5;        // normalized center, [0,1]
  double y = 0.5;
  double rotation = 0.0; // radians, [0, 2pi)
};

inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 8;
inline constexpr int kNumSizes = 3;
inline constexpr int kNumAppearanceCombos = kNumShapes * kNumColors * kNumSizes;

inline constexpr std::array<std::array<double, 3>, kNumColors> kPalette{{
    {1.0, 0.15, 0.15},
    {0.15, 1.0, 0.15},
    {0.25, 0.35, 1.0},
    {1.0, 1.0, 0.2},
    {1.0, 0.25, 1.0},
    {0.2, 1.0, 1.0},
    {1.0, 1.0, 1.0},
    {1.0, 0.55, 0.1},
}};

inline constexpr std::array<double, kNumSizes> kSizeFractions{0.12, 0.18, 0.24};

// Largest circumradius over shapes, relative to the base radius: the cross
// reaches sqrt(1 + 0.35^2) ~ 1.0595.
inline constexpr double kCircumradiusFactor = 1.06;

namespace detail {

inline bool inside_shape(int shape_id, double u, double v, double r) {
  switch (shape_id) {
    case 0:
      return u * u + v * v <= r * r;
    case 1: {
      const double s = r / std::numbers::sqrt2;
      return std::abs(u) <= s && std::abs(v) <= s;
    }
    case 2: {
      // equilateral, circumradius r, one vertex on the +v axis; inside means
      // behind all three edge half-planes (inradius r/2)
      static const double c30 = std::cos(std::numbers::pi / 6.0);
      const double n[3][2] = {{c30, 0.5}, {-c30, 0.5}, {0.0, -1.0}};
      for (const auto& nk : n)
        if (u * nk[0] + v * nk[1] > r / 2.0) return false;
      return true;
    }
    case 3: {
      const double wdt = 0.35 * r;
      return (std::abs(u) <= r && std::abs(v) <= wdt) ||
             (std::abs(v) <= r && std::abs(u) <= wdt);
    }
    default:
      return false;
  }
}

inline void validate_factors(const AppearanceFactors& a, const PoseFactors& p) {
  if (a.shape_id < 0 || a.shape_id >= kNumShapes)
    throw ValidationError("shape_id out of range: " + std::to_string(a.shape_id));
  if (a.color_id < 0 || a.color_id >= kNumColors)
    throw ValidationError("color_id out of range: " + std::to_string(a.color_id));
  if (a.size_class < 0 || a.size_class >= kNumSizes)
    throw ValidationError("size_class out of range: " + std::to_string(a.size_class));
  if (!(p.x >= 0.0 && p.x <= 1.0) || !(p.y >= 0.0 && p.y <= 1.0))
    throw ValidationError("pose position out of [0,1]");
  if (!(p.rotation >= 0.0 && p.rotation < 2.0 * std::numbers::pi))
    throw ValidationError("rotation out of [0, 2pi)");
}

inline void check_resolution(int resolution) {
  if (resolution != 32 && resolution != 64)
    throw ConfigError("unsupported resolution: " + std::to_string(resolution));
}

}  // namespace detail

// Renders one sprite into batch slot bi. Deterministic; 4x4 supersampled
// coverage against a black background. The feasible center region is inset
// by the worst-case circumradius so every sprite fits fully on canvas.
template <typename Real>
void render_sprite_into(Tensor<Real>& dst, int bi, const AppearanceFactors& a,
                        const PoseFactors& p, int resolution) {
  detail::validate_factors(a, p);
  detail::check_resolution(resolution);
  const double r = kSizeFractions[a.size_class] * resolution;
  const double margin = kCircumradiusFactor * kSizeFractions.back() * resolution;
  const double cx = margin + p.x * (resolution - 2.0 * margin);
  const double cy = margin + p.y * (resolution - 2.0 * margin);
  const double cr = std::cos(p.rotation), sr = std::sin(p.rotation);
  const auto& rgb = kPalette[a.color_id];

  for (int iy = 0; iy < resolution; ++iy) {
    for (int ix = 0; ix < resolution; ++ix) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
          const double qx = ix + (sx + 0.5) / 4.0 - cx;
          const double qy = iy + (sy + 0.5) / 4.0 - cy;
          double u = qx, v = qy;
          if (a.shape_id != 0) {  // the circle skips rotation entirely
            u = cr * qx + sr * qy;
            v = -sr * qx + cr * qy;
          }
          if (detail::inside_shape(a.shape_id, u, v, r)) ++hits;
        }
      }
      const double cov = hits / 16.0;
      for (int ch = 0; ch < 3; ++ch) dst.at(bi, iy, ix, ch) = Real(cov * rgb[ch]);
    }
  }
}

template <typename Real>
Tensor<Real> render_sprite(const AppearanceFactors& a, const PoseFactors& p, int resolution) {
  Tensor<Real> img(1, resolution, resolution, 3);
  render_sprite_into(img, 0, a, p, resolution);
  return img;
}

// Enumeration order: shape-major, then color, then size.
inline std::vector<AppearanceFactors> all_appearance_combos() {
  std::vector<AppearanceFactors> out;
  out.reserve(kNumAppearanceCombos);
  for (int s = 0; s < kNumShapes; ++s)
    for (int c = 0; c < kNumColors; ++c)
      for (int z = 0; z < kNumSizes; ++z) out.push_back({s, c, z});
  return out;
}

struct FactorSplit {
  std::vector<AppearanceFactors> train, test;
};

// Disjoint partition of the appearance combinations; evaluation triplets draw
// from the held-out side only.
inline FactorSplit train_test_split_factors(double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw ConfigError("holdout fraction must be in (0,1)");
  auto combos = all_appearance_combos();
  const int n_test = int(std::llround(holdout_fraction * combos.size()));
  if (n_test == 0 || n_test == int(combos.size()))
    throw ConfigError("holdout fraction leaves an empty split");
  Rng rng(mix_seed(seed, 0x5917));
  rng.shuffle(combos);
  FactorSplit split;
  split.test.assign(combos.begin(), combos.begin() + n_test);
  split.train.assign(combos.begin() + n_test, combos.end());
  return split;
}

template <typename Real>
struct PairBatch {
  Tensor<Real> x1, x2;
  std::vector<AppearanceFactors> appearance;
  // ground truth beyond the training contract, kept for verification
  std::vector<PoseFactors> pose1, pose2;
};

template <typename Real>
struct TripletBatch {
  Tensor<Real> x1, x2, x3;
  std::vector<PoseFactors> shared_pose;            // pose of x2 and x3
  std::vector<AppearanceFactors> shared_appearance; // appearance of x1 and x2
  std::vector<PoseFactors> pose1;                   // pose of x1
  std::vector<AppearanceFactors> appearance3;       // appearance of x3
};

namespace detail {

inline PoseFactors sample_pose(Rng& rng) {
  PoseFactors p;
  p.x = rng.uniform();
  p.y = rng.uniform();
  p.rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return p;
}

inline const AppearanceFactors& pick(const std::vector<AppearanceFactors>& pool, Rng& rng) {
  return pool[rng.below(pool.size())];
}

}  // namespace detail

// Appearance-matched pair: same appearance factors, independent poses.
template <typename Real>
PairBatch<Real> sample_pair_batch(std::uint64_t seed, int batch, int resolution,
                                  const std::vector<AppearanceFactors>& pool) {
  if (batch < 1) throw ValidationError("batch must be >= 1");
  if (pool.empty()) throw ValidationError("empty appearance pool");
  detail::check_resolution(resolution);
  Rng rng(seed);
  PairBatch<Real> out;
  out.x1 = Tensor<Real>(batch, resolution, resolution, 3);
  out.x2 = Tensor<Real>(batch, resolution, resolution, 3);
  for (int i = 0; i < batch; ++i) {
    const AppearanceFactors a = detail::pick(pool, rng);
    const PoseFactors p1 = detail::sample_pose(rng);
    const PoseFactors p2 = detail::sample_pose(rng);
    render_sprite_into(out.x1, i, a, p1, resolution);
    render_sprite_into(out.x2, i, a, p2, resolution);
    out.appearance.push_back(a);
    out.pose1.push_back(p1);
    out.pose2.push_back(p2);
  }
  return out;
}

// Evaluation triplet: x1 and x2 share appearance, x2 and x3 share pose, and
// x1/x3 share neither factor set.
template <typename Real>
TripletBatch<Real> sample_triplet_batch(std::uint64_t seed, int batch, int resolution,
                                        const std::vector<AppearanceFactors>& pool) {
  if (batch < 1) throw ValidationError("batch must be >= 1");
  if (pool.size() < 2)
    throw ValidationError("triplets need at least two appearance combinations");
  detail::check_resolution(resolution);
  Rng rng(seed);
  TripletBatch<Real> out;
  out.x1 = Tensor<Real>(batch, resolution, resolution, 3);
  out.x2 = Tensor<Real>(batch, resolution, resolution, 3);
  out.x3 = Tensor<Real>(batch, resolution, resolution, 3);
  for (int i = 0; i < batch; ++i) {
    const AppearanceFactors a = detail::pick(pool, rng);
    AppearanceFactors b = a;
    int retries = 0;
    while (b == a) {
      if (++retries > 100) throw ValidationError("could not draw a distinct appearance");
      b = detail::pick(pool, rng);
    }
    const PoseFactors shared = detail::sample_pose(rng);
    PoseFactors p1 = detail::sample_pose(rng);
    while (p1.x == shared.x && p1.y == shared.y && p1.rotation == shared.rotation)
      p1 = detail::sample_pose(rng);
    render_sprite_into(out.x1, i, a, p1, resolution);
    render_sprite_into(out.x2, i, a, shared, resolution);
    render_sprite_into(out.x3, i, b, shared, resolution);
    out.shared_pose.push_back(shared);
    out.shared_appearance.push_back(a);
    out.pose1.push_back(p1);
    out.appearance3.push_back(b);
  }
  return out;
}

}  // namespace disent

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "disent/tensor.hpp"

namespace testutil {

// Central-difference gradient of a scalar function over a flat buffer.
inline std::vector<double> fd_grad(std::vector<double>& x,
                                   const std::function<double()>& eval, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = eval();
    x[i] = x0 - h;
    const double fm = eval();
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b,
                           double floor = 1e-6) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    m = std::max(m, std::abs(a[i] - b[i]) / scale);
  }
  return m;
}

}  // namespace testutil

#pragma once

// Central finite differences in binary64 and the error metric used to
// compare analytic gradients against them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace lsf::oracle {

struct FdConfig {
  double h_rel = 1e-6;
  double tolerance_rel = 1e-5;
  double kink_exclusion_radius = 0.0;  // skip elements whose ReLU input is this close to 0
};

// g_i = (f(x + h e_i) - f(x - h e_i)) / 2h, h = h_rel * max(1, |x_i|).
inline std::vector<double> fd_grad(const std::function<double(const std::vector<double>&)>& f,
                                   std::vector<double> x, const FdConfig& cfg = {}) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double h = cfg.h_rel * std::max(1.0, std::abs(xi));
    x[i] = xi + h;
    const double up = f(x);
    x[i] = xi - h;
    const double down = f(x);
    x[i] = xi;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(max_i |b_i|, floor): error relative to the scale
// of the reference tensor b.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double num = 0.0, den = floor;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  if (a.size() != b.size()) return INFINITY;
  return num / den;
}

}  // namespace lsf::oracle

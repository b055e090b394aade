// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle used by the gradient suites. Evaluates
// the scalar functional around each coordinate of a leaf's value vector at
// 64-bit precision; independent of the reverse-mode path it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tinydistill/autograd.hpp"

namespace fd {

inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

// f re-runs the forward pass from current leaf values and returns the loss.
inline std::vector<double> central_diff(std::vector<double>& x,
                                        const std::function<double()>& f,
                                        double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f();
    x[i] = orig - h;
    const double fm = f();
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// max relative error between reverse-mode and central differences on a leaf
inline double max_rel_err(const std::vector<double>& analytic,
                          const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, rel_err(analytic[i], numeric[i]));
  return worst;
}

} // namespace fd

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "icgm/tensor.hpp"

namespace testutil {

/// Central-difference gradient check of a scalar-valued forward function
/// against the recorded backward pass, element by element over every leaf.
inline void check_gradients(const std::function<icgm::Tensor()>& forward,
                            std::vector<icgm::Tensor> leaves,
                            double h = 1e-5, double rel = 1e-4) {
  for (auto& leaf : leaves) leaf.zero_grad();
  icgm::Tensor out = forward();
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto vals = leaves[li].values_mut();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double fp = forward().scalar_value();
      vals[i] = keep - h;
      const double fm = forward().scalar_value();
      vals[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double g = analytic[li][i];
      const double tol = rel * std::max({1.0, std::abs(fd), std::abs(g)});
      INFO("leaf ", li, " element ", i, " analytic ", g, " fd ", fd);
      CHECK(std::abs(g - fd) <= tol);
    }
  }
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic distribution).
inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const size_t n = a.size(), m = b.size();
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < n && j < m) {
    const double x = std::min(a[i], b[j]);
    while (i < n && a[i] <= x) ++i;
    while (j < m && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n -
                             static_cast<double>(j) / m));
  }
  const double en = std::sqrt(static_cast<double>(n) * m / (n + m));
  const double lambda = (en + 0.12 + 0.11 / en) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::min(std::max(p, 0.0), 1.0);
}

}  // namespace testutil

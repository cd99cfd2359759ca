// Copyright 2026 The drthresh Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "drthresh/core/error.hpp"

namespace drthresh {

/// Standard normal CDF.
inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Standard normal density.
inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Inverse of normal_cdf. Bisection on [-40, 40] followed by one Newton
/// step; round-trips through normal_cdf to ~1e-12 away from the far tails.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_quantile: p must lie in (0, 1), got " + std::to_string(p));
  }
  if (p == 0.5) return 0.0;
  double lo = -40.0;
  double hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double x = 0.5 * (lo + hi);
  const double density = normal_pdf(x);
  if (density > 1e-300) {
    const double polished = x - (normal_cdf(x) - p) / density;
    if (std::isfinite(polished)) x = polished;
  }
  return x;
}

/// Kolmogorov-Smirnov distance between the sample's empirical CDF and a
/// reference CDF, checking both one-sided limits at every jump.
template <class Cdf>
double ks_statistic(std::span<const double> sample, Cdf&& reference_cdf) {
  if (sample.empty()) throw DomainError("ks_statistic: empty sample");
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = reference_cdf(sorted[i]);
    d = std::max(d, static_cast<double>(i + 1) / m - f);
    d = std::max(d, f - static_cast<double>(i) / m);
  }
  return std::clamp(d, 0.0, 1.0);
}

inline double uniform01_cdf(double x) { return std::clamp(x, 0.0, 1.0); }

/// Survival function of the Kolmogorov distribution, Q(lambda).
inline double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.0) {
    // K(l) = sqrt(2 pi)/l * sum_j exp(-(2j-1)^2 pi^2 / (8 l^2)); Q = 1 - K.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double k = 0.0;
    for (int j = 1; j <= 100; ++j) {
      const double odd = 2.0 * j - 1.0;
      const double term = std::exp(-odd * odd * pi2 / (8.0 * lambda * lambda));
      k += term;
      if (term < 1e-18) break;
    }
    k *= std::sqrt(2.0 * std::numbers::pi) / lambda;
    return std::clamp(1.0 - k, 0.0, 1.0);
  }
  double q = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    q += sign * term;
    sign = -sign;
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * q, 0.0, 1.0);
}

/// Asymptotic p-value of a one-sample KS statistic from `m` draws.
inline double ks_uniform_pvalue(double statistic, std::size_t m) {
  return kolmogorov_survival(std::sqrt(static_cast<double>(m)) * statistic);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Standard deviation with divisor n (ddof = 0) or n - 1 (ddof = 1).
inline double stddev(std::span<const double> v, int ddof = 0) {
  const auto n = static_cast<double>(v.size());
  if (n - ddof <= 0.0) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (n - ddof));
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace drthresh

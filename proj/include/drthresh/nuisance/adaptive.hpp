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
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "drthresh/core/error.hpp"
#include "drthresh/core/types.hpp"
#include "drthresh/nuisance/local_poly.hpp"

namespace drthresh {

struct BandwidthResult {
  double h = 0.0;
  /// Treated observations within distance h.
  std::size_t count = 0;
  /// No treated observations: h is the cap.
  bool no_treated = false;
  /// The cap bound the answer rather than the count condition.
  bool capped = false;
};

/// Largest h <= cap with N(h) <= 2 h^(-2 beta_mu), where N(h) counts sample
/// points within Euclidean distance h of x0.
///
/// N is a right-continuous step function and 2 h^(-2 beta) is decreasing, so
/// the feasible set is an interval (0, h*]. Walking the sorted distances,
/// on the level where N = c the condition reads h <= (2/c)^(1/(2 beta)).
inline BandwidthResult adaptive_bandwidth(std::span<const double> x0, const RegressionSample& sample,
                                          double beta_mu, double cap) {
  if (!(beta_mu > 0.0)) throw DomainError("adaptive_bandwidth: beta_mu must be positive");
  if (!(cap > 0.0)) throw DomainError("adaptive_bandwidth: cap must be positive");
  BandwidthResult out;
  if (sample.size() == 0) {
    out.h = cap;
    out.no_treated = true;
    out.capped = true;
    return out;
  }
  std::vector<double> dist(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) dist[i] = euclidean_distance(sample.row(i), x0);
  std::sort(dist.begin(), dist.end());

  const double inv_exp = 1.0 / (2.0 * beta_mu);
  std::size_t i = 0;
  while (i < dist.size()) {
    const double level = dist[i];
    if (level > cap) break;
    std::size_t j = i;
    while (j < dist.size() && dist[j] == level) ++j;
    const double count = static_cast<double>(j);
    const double crossing = std::pow(2.0 / count, inv_exp);
    if (crossing < level) {
      // Feasible just below `level`, infeasible at it: the sup is `level`.
      out.h = level;
      out.count = i;
      return out;
    }
    const double next = j < dist.size() ? dist[j] : std::numeric_limits<double>::infinity();
    if (crossing < next) {
      if (crossing > cap) break;
      out.h = crossing;
      out.count = j;
      return out;
    }
    i = j;
  }
  out.h = cap;
  out.capped = true;
  out.count = static_cast<std::size_t>(
      std::upper_bound(dist.begin(), dist.end(), cap) - dist.begin());
  return out;
}

/// Default bandwidth cap: max(1, diameter of the covariate bounding box).
inline double bandwidth_cap(const Dataset& data) {
  double diam2 = 0.0;
  for (const auto& [lo, hi] : data.bounding_box()) diam2 += (hi - lo) * (hi - lo);
  return std::max(1.0, std::sqrt(diam2));
}

inline BandwidthResult adaptive_bandwidth(std::span<const double> x0, const Dataset& data,
                                          double beta_mu) {
  if (data.empty()) throw DomainError("adaptive_bandwidth: empty dataset");
  return adaptive_bandwidth(x0, RegressionSample::treated(data), beta_mu, bandwidth_cap(data));
}

/// Regular lattice anchored at `origin` with `counts[j]` points along axis j.
struct Lattice {
  std::vector<double> origin;
  double spacing = 1.0;
  std::vector<std::size_t> counts;

  /// Covers the box with points origin + k * spacing, k = 0..ceil(extent/spacing).
  static Lattice covering(const std::vector<std::pair<double, double>>& box, double spacing) {
    Lattice g;
    g.spacing = spacing;
    for (const auto& [lo, hi] : box) {
      g.origin.push_back(lo);
      const double steps = std::ceil((hi - lo) / spacing - 1e-12);
      g.counts.push_back(static_cast<std::size_t>(std::max(0.0, steps)) + 1);
    }
    return g;
  }

  std::size_t dim() const { return origin.size(); }

  std::size_t size() const {
    std::size_t total = 1;
    for (auto c : counts) total *= c;
    return total;
  }

  /// Coordinates of the point with flat index `flat` (last axis fastest).
  std::vector<double> point(std::size_t flat) const {
    std::vector<double> p(dim());
    for (std::size_t j = dim(); j-- > 0;) {
      p[j] = origin[j] + static_cast<double>(flat % counts[j]) * spacing;
      flat /= counts[j];
    }
    return p;
  }

  /// Flat indices of lattice points within Euclidean `radius` of x.
  std::vector<std::size_t> within(std::span<const double> x, double radius) const {
    std::vector<std::size_t> lo(dim()), hi(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      const double a = std::ceil((x[j] - radius - origin[j]) / spacing - 1e-9);
      const double b = std::floor((x[j] + radius - origin[j]) / spacing + 1e-9);
      const double top = static_cast<double>(counts[j]) - 1.0;
      if (b < 0.0 || a > top) return {};
      lo[j] = static_cast<std::size_t>(std::max(a, 0.0));
      hi[j] = static_cast<std::size_t>(std::min(b, top));
    }
    std::vector<std::size_t> out;
    std::vector<std::size_t> idx = lo;
    while (true) {
      std::size_t flat = 0;
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim(); ++j) {
        flat = flat * counts[j] + idx[j];
        const double c = origin[j] + static_cast<double>(idx[j]) * spacing - x[j];
        d2 += c * c;
      }
      if (std::sqrt(d2) <= radius * (1.0 + 1e-12)) out.push_back(flat);
      std::size_t j = dim();
      while (j-- > 0) {
        if (idx[j] < hi[j]) {
          ++idx[j];
          break;
        }
        idx[j] = lo[j];
      }
      if (j == static_cast<std::size_t>(-1)) break;
    }
    return out;
  }
};

/// Local polynomial degree used for Hoelder order beta: ceil(beta) - 1.
inline int adaptive_degree(double beta_mu) {
  return std::max(0, static_cast<int>(std::ceil(beta_mu)) - 1);
}

namespace detail {

// All exponent tuples of total degree <= degree in `dim` variables.
inline std::vector<std::vector<int>> monomials(std::size_t dim, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(dim, 0);
  auto rec = [&](auto&& self, std::size_t axis, int remaining) -> void {
    if (axis == dim) {
      out.push_back(cur);
      return;
    }
    for (int p = 0; p <= remaining; ++p) {
      cur[axis] = p;
      self(self, axis + 1, remaining - p);
    }
    cur[axis] = 0;
  };
  rec(rec, 0, degree);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    int sa = 0, sb = 0;
    for (int v : a) sa += v;
    for (int v : b) sb += v;
    return sa < sb;
  });
  return out;
}

struct PolyFit {
  double value = 0.0;
  int degree_used = 0;
  bool fell_back = false;
};

// Intercept of the least-squares fit of `ys` on monomials of (x - x0)/scale.
// Too few points or a rank-deficient design fall back to the mean; an empty
// set returns 0.
inline PolyFit polynomial_intercept(std::span<const double> x0,
                                    const std::vector<std::vector<double>>& xs,
                                    const std::vector<double>& ys, int degree, double scale) {
  PolyFit out;
  if (ys.empty()) return out;
  double mean = 0.0;
  for (double v : ys) mean += v;
  mean /= static_cast<double>(ys.size());
  if (degree > 0) {
    const auto terms = monomials(x0.size(), degree);
    const auto m = static_cast<Eigen::Index>(ys.size());
    const auto p = static_cast<Eigen::Index>(terms.size());
    if (m >= p) {
      Eigen::MatrixXd design(m, p);
      Eigen::VectorXd rhs(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto& xi = xs[static_cast<std::size_t>(i)];
        for (Eigen::Index t = 0; t < p; ++t) {
          double v = 1.0;
          const auto& e = terms[static_cast<std::size_t>(t)];
          for (std::size_t j = 0; j < x0.size(); ++j) {
            v *= std::pow((xi[j] - x0[j]) / scale, e[j]);
          }
          design(i, t) = v;
        }
        rhs[i] = ys[static_cast<std::size_t>(i)];
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
      qr.setThreshold(1e-10);
      if (qr.rank() == p) {
        const Eigen::VectorXd coef = qr.solve(rhs);
        if (coef.allFinite()) {
          out.value = coef[0];
          out.degree_used = degree;
          return out;
        }
      }
    }
    out.fell_back = true;
  }
  out.value = mean;
  return out;
}

}  // namespace detail

struct AdaptiveRegressorMeta {
  int degree = 0;
  double first_pass_spacing = 0.0;
  std::size_t first_pass_points = 0;
  /// Gridpoints whose local fit fell back to degree 0.
  std::size_t degree_fallbacks = 0;
  /// Gridpoints with an empty window (value 0).
  std::size_t empty_windows = 0;
  double cap = 0.0;
};

/// Weak-overlap adaptive regressor: local polynomial fits at lattice
/// gridpoints with per-point bandwidths, interpolated between gridpoints.
struct AdaptiveRegressorFit {
  Lattice grid;
  std::vector<double> grid_values;
  std::vector<double> bandwidths;
  double beta_mu = 1.0;
  /// Lattice spacing, the largest first-pass bandwidth.
  double h_bar = 0.0;
  AdaptiveRegressorMeta meta;

  std::size_t size() const { return grid_values.size(); }
  std::vector<double> gridpoint(std::size_t j) const { return grid.point(j); }
};

/// Fits the adaptive regressor on the treated observations of `data`.
///
/// 1. First-pass lattice with spacing n^(-1/(2 beta + d)) over the covariate
///    bounding box; h-bar is the largest adaptive bandwidth over it.
/// 2. Final lattice with spacing h-bar.
/// 3. Per gridpoint: adaptive bandwidth, then a uniform-kernel local
///    polynomial of degree ceil(beta) - 1.
inline AdaptiveRegressorFit fit_adaptive_regressor(const Dataset& data, double beta_mu) {
  if (!(beta_mu > 0.0)) throw DomainError("fit_adaptive_regressor: beta_mu must be positive");
  const RegressionSample sample = RegressionSample::treated(data);
  const auto needed = static_cast<std::size_t>(std::ceil(beta_mu)) + 1;
  if (sample.size() < needed) {
    throw DegenerateDataError("fit_adaptive_regressor: need at least " + std::to_string(needed) +
                              " treated observations, have " + std::to_string(sample.size()));
  }
  const auto n = static_cast<double>(data.size());
  const auto d = static_cast<double>(data.dim());
  const auto box = data.bounding_box();

  AdaptiveRegressorFit fit;
  fit.beta_mu = beta_mu;
  fit.meta.degree = adaptive_degree(beta_mu);
  fit.meta.cap = bandwidth_cap(data);
  fit.meta.first_pass_spacing = std::pow(n, -1.0 / (2.0 * beta_mu + d));

  const Lattice first = Lattice::covering(box, fit.meta.first_pass_spacing);
  fit.meta.first_pass_points = first.size();
  double h_bar = 0.0;
  for (std::size_t j = 0; j < first.size(); ++j) {
    const auto p = first.point(j);
    h_bar = std::max(h_bar, adaptive_bandwidth(p, sample, beta_mu, fit.meta.cap).h);
  }
  fit.h_bar = h_bar;
  fit.grid = Lattice::covering(box, h_bar);

  fit.grid_values.resize(fit.grid.size());
  fit.bandwidths.resize(fit.grid.size());
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (std::size_t j = 0; j < fit.grid.size(); ++j) {
    const auto p = fit.grid.point(j);
    const double h = adaptive_bandwidth(p, sample, beta_mu, fit.meta.cap).h;
    fit.bandwidths[j] = h;
    xs.clear();
    ys.clear();
    for (std::size_t i = 0; i < sample.size(); ++i) {
      auto row = sample.row(i);
      if (euclidean_distance(row, p) <= h) {
        xs.emplace_back(row.begin(), row.end());
        ys.push_back(sample.y[i]);
      }
    }
    const auto pf = detail::polynomial_intercept(p, xs, ys, fit.meta.degree, h);
    if (ys.empty()) ++fit.meta.empty_windows;
    if (pf.fell_back) ++fit.meta.degree_fallbacks;
    fit.grid_values[j] = pf.value;
  }
  return fit;
}

/// Interpolates gridpoint values: local polynomial of degree ceil(beta) - 1
/// over the gridpoints within ceil(beta) * h-bar of x. At a gridpoint the
/// stored value is returned.
inline double predict_adaptive(const AdaptiveRegressorFit& fit, std::span<const double> x) {
  if (fit.grid_values.empty()) return 0.0;
  if (x.size() != fit.grid.dim()) throw InputError("predict_adaptive: dimension mismatch");
  const double radius = std::ceil(fit.beta_mu) * fit.h_bar;
  const auto near = fit.grid.within(x, radius);
  const double snap = 1e-12 * std::max(1.0, fit.h_bar);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (std::size_t flat : near) {
    auto p = fit.grid.point(flat);
    if (euclidean_distance(p, x) <= snap) return fit.grid_values[flat];
    xs.push_back(std::move(p));
    ys.push_back(fit.grid_values[flat]);
  }
  return detail::polynomial_intercept(x, xs, ys, fit.meta.degree, fit.h_bar).value;
}

}  // namespace drthresh

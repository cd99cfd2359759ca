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
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "drthresh/core/error.hpp"
#include "drthresh/core/types.hpp"

namespace drthresh {

/// Treated-only regression sample: covariates row-major (n x dim) and outcomes.
struct RegressionSample {
  std::size_t dim = 1;
  std::vector<double> x;
  std::vector<double> y;

  std::size_t size() const { return y.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }

  static RegressionSample treated(const Dataset& data) {
    RegressionSample s;
    s.dim = data.dim();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.d(i) != 1) continue;
      auto xi = data.x(i);
      s.x.insert(s.x.end(), xi.begin(), xi.end());
      s.y.push_back(data.y(i));
    }
    return s;
  }
};

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s);
}

struct LocalFitResult {
  double value = 0.0;
  std::size_t window_count = 0;
  int degree_used = 0;
};

namespace detail {

// Intercept of the least-squares fit of y on [1, x - x0] (degree 1) or the
// window mean (degree 0). Rank-deficient designs fall back to degree 0.
inline LocalFitResult local_fit_window(std::span<const double> x0,
                                       const std::vector<std::span<const double>>& xs,
                                       const std::vector<double>& ys, int degree) {
  LocalFitResult out;
  out.window_count = ys.size();
  if (ys.empty()) return out;
  const double window_mean =
      std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
  const auto dim = static_cast<Eigen::Index>(x0.size());
  if (degree >= 1 && static_cast<Eigen::Index>(ys.size()) >= dim + 1) {
    const auto m = static_cast<Eigen::Index>(ys.size());
    Eigen::MatrixXd design(m, dim + 1);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      design(i, 0) = 1.0;
      for (Eigen::Index j = 0; j < dim; ++j) design(i, j + 1) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - x0[static_cast<std::size_t>(j)];
      rhs[i] = ys[static_cast<std::size_t>(i)];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() == dim + 1) {
      const Eigen::VectorXd coef = qr.solve(rhs);
      if (coef.allFinite()) {
        out.value = coef[0];
        out.degree_used = 1;
        return out;
      }
    }
  }
  out.value = window_mean;
  out.degree_used = 0;
  return out;
}

}  // namespace detail

/// Uniform-kernel local polynomial regression at `x0`: the window is every
/// sample point with ||X - x0|| <= h. Degree 0 is the window mean, degree 1
/// the intercept of a local linear fit. An empty window returns 0.
inline LocalFitResult local_poly_fit(std::span<const double> x0, const RegressionSample& data,
                                     double h, int degree) {
  if (!(h > 0.0)) throw DomainError("local_poly_predict: bandwidth must be positive");
  if (degree != 0 && degree != 1) throw DomainError("local_poly_predict: degree must be 0 or 1");
  if (x0.size() != data.dim) throw InputError("local_poly_predict: dimension mismatch");
  std::vector<std::span<const double>> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (euclidean_distance(data.row(i), x0) <= h) {
      xs.push_back(data.row(i));
      ys.push_back(data.y[i]);
    }
  }
  return detail::local_fit_window(x0, xs, ys, degree);
}

inline double local_poly_predict(std::span<const double> x0, const RegressionSample& data,
                                 double h, int degree) {
  return local_poly_fit(x0, data, h, degree).value;
}

/// Fixed-bandwidth local polynomial regressor. One-dimensional data use
/// sorted prefix sums so each prediction costs O(log n); higher dimensions
/// scan the sample.
class LocalPolyRegressor {
 public:
  /// `min_neighbors` > 0 widens the window at x0 to the distance of the
  /// min_neighbors-th nearest sample point when h alone holds fewer points.
  LocalPolyRegressor(RegressionSample data, double h, int degree, std::size_t min_neighbors = 0)
      : data_(std::move(data)), h_(h), degree_(degree), min_neighbors_(min_neighbors) {
    if (!(h > 0.0)) throw DomainError("LocalPolyRegressor: bandwidth must be positive");
    if (degree != 0 && degree != 1) throw DomainError("LocalPolyRegressor: degree must be 0 or 1");
    if (data_.dim == 1) build_prefix();
  }

  double bandwidth() const { return h_; }
  int degree() const { return degree_; }

  double predict(std::span<const double> x0) const {
    const double h = window(x0);
    if (data_.dim != 1) return local_poly_predict(x0, data_, h, degree_);
    return predict_1d(x0[0], h);
  }

  /// Bandwidth used at x0.
  double window(std::span<const double> x0) const {
    if (min_neighbors_ == 0 || data_.size() == 0) return h_;
    const std::size_t k = std::min(min_neighbors_, data_.size());
    double kth = 0.0;
    if (data_.dim == 1) {
      // Merge outward from the insertion point.
      const double x = x0[0];
      auto right = static_cast<std::size_t>(
          std::lower_bound(sorted_x_.begin(), sorted_x_.end(), x) - sorted_x_.begin());
      std::size_t left = right;
      for (std::size_t taken = 0; taken < k; ++taken) {
        const double dl = left > 0 ? x - sorted_x_[left - 1] : INFINITY;
        const double dr = right < sorted_x_.size() ? sorted_x_[right] - x : INFINITY;
        if (dl <= dr) {
          kth = dl;
          --left;
        } else {
          kth = dr;
          ++right;
        }
      }
    } else {
      std::vector<double> dist(data_.size());
      for (std::size_t i = 0; i < data_.size(); ++i) dist[i] = euclidean_distance(data_.row(i), x0);
      std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
      kth = dist[k - 1];
    }
    return std::max(h_, kth);
  }

 private:
  void build_prefix() {
    const std::size_t n = data_.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return data_.x[a] < data_.x[b]; });
    sorted_x_.resize(n);
    center_ = n > 0 ? std::accumulate(data_.x.begin(), data_.x.end(), 0.0) / static_cast<double>(n) : 0.0;
    s1_.assign(n + 1, 0.0);
    s2_.assign(n + 1, 0.0);
    t0_.assign(n + 1, 0.0);
    t1_.assign(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = order[k];
      sorted_x_[k] = data_.x[i];
      const double u = data_.x[i] - center_;
      s1_[k + 1] = s1_[k] + u;
      s2_[k + 1] = s2_[k] + u * u;
      t0_[k + 1] = t0_[k] + data_.y[i];
      t1_[k + 1] = t1_[k] + u * data_.y[i];
    }
  }

  double predict_1d(double x0, double h) const {
    const auto lo = static_cast<std::size_t>(
        std::lower_bound(sorted_x_.begin(), sorted_x_.end(), x0 - h) - sorted_x_.begin());
    const auto hi = static_cast<std::size_t>(
        std::upper_bound(sorted_x_.begin(), sorted_x_.end(), x0 + h) - sorted_x_.begin());
    // Boundary points the sorted search admits but the distance test rejects
    // (or vice versa) differ only by rounding in x0 +/- h; realign exactly.
    std::size_t a = lo, b = hi;
    while (a > 0 && std::abs(sorted_x_[a - 1] - x0) <= h) --a;
    while (a < b && std::abs(sorted_x_[a] - x0) > h) ++a;
    while (b < sorted_x_.size() && std::abs(sorted_x_[b] - x0) <= h) ++b;
    while (b > a && std::abs(sorted_x_[b - 1] - x0) > h) --b;
    if (a >= b) return 0.0;
    const double count = static_cast<double>(b - a);
    const double sy = t0_[b] - t0_[a];
    if (degree_ == 0 || b - a < 2) return sy / count;
    const double c = x0 - center_;
    const double su = s1_[b] - s1_[a] - c * count;                     // sum (x - x0)
    const double suu = s2_[b] - s2_[a] - 2.0 * c * (s1_[b] - s1_[a]) + c * c * count;
    const double suy = t1_[b] - t1_[a] - c * sy;
    const double det = count * suu - su * su;
    if (!(det > 1e-10 * count * std::max(suu, 1e-300)) ) return sy / count;
    return (suu * sy - su * suy) / det;
  }

  RegressionSample data_;
  double h_;
  int degree_;
  std::size_t min_neighbors_ = 0;
  double center_ = 0.0;
  std::vector<double> sorted_x_, s1_, s2_, t0_, t1_;
};

}  // namespace drthresh

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
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drthresh/core/error.hpp"
#include "drthresh/core/rng.hpp"

namespace drthresh {

struct Observation {
  int d = 0;
  double y = 0.0;
  std::vector<double> x;
};

/// Observations stored column-wise. Covariates are row-major, n x dim.
///
/// Optional oracle annotations carry the true nuisances of simulated data:
/// the propensity e(X_i), the treated-arm mean mu(X_i) and the control-arm
/// mean E[Y | X_i, D = 0].
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw InputError("Dataset: covariate dimension must be >= 1");
  }

  static Dataset from_observations(std::span<const Observation> obs) {
    if (obs.empty()) throw InputError("Dataset: no observations");
    Dataset data(obs.front().x.size());
    for (const auto& o : obs) data.add(o.d, o.y, o.x);
    return data;
  }

  void add(int d, double y, std::span<const double> x) {
    if (d != 0 && d != 1) throw InputError("Dataset: treatment must be 0 or 1");
    if (x.size() != dim_) {
      throw InputError("Dataset: covariate length " + std::to_string(x.size()) +
                       " does not match dim " + std::to_string(dim_));
    }
    if (!std::isfinite(y)) throw InputError("Dataset: non-finite outcome");
    d_.push_back(d);
    y_.push_back(y);
    x_.insert(x_.end(), x.begin(), x.end());
  }

  std::size_t size() const { return d_.size(); }
  bool empty() const { return d_.empty(); }
  std::size_t dim() const { return dim_; }

  int d(std::size_t i) const { return d_[i]; }
  double y(std::size_t i) const { return y_[i]; }
  std::span<const double> x(std::size_t i) const {
    return {x_.data() + i * dim_, dim_};
  }
  Observation observation(std::size_t i) const {
    auto xi = x(i);
    return {d_[i], y_[i], std::vector<double>(xi.begin(), xi.end())};
  }

  std::span<const int> treatments() const { return d_; }
  std::span<const double> outcomes() const { return y_; }
  std::span<const double> covariates() const { return x_; }

  std::size_t treated_count() const {
    return static_cast<std::size_t>(std::count(d_.begin(), d_.end(), 1));
  }

  const std::optional<std::vector<double>>& true_propensity() const { return true_e_; }
  const std::optional<std::vector<double>>& true_outcome_mean() const { return true_mu_; }
  const std::optional<std::vector<double>>& true_control_mean() const { return true_mu0_; }

  void set_true_propensity(std::vector<double> e) {
    check_annotation(e, "true_propensity");
    for (double v : e) {
      if (!(v > 0.0 && v <= 1.0)) throw InputError("Dataset: true_propensity outside (0, 1]");
    }
    true_e_ = std::move(e);
  }
  void set_true_outcome_mean(std::vector<double> mu) {
    check_annotation(mu, "true_outcome_mean");
    true_mu_ = std::move(mu);
  }
  void set_true_control_mean(std::vector<double> mu0) {
    check_annotation(mu0, "true_control_mean");
    true_mu0_ = std::move(mu0);
  }

  /// Rows `indices` (repeats allowed), annotations carried along.
  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out(dim_);
    out.d_.reserve(indices.size());
    out.y_.reserve(indices.size());
    out.x_.reserve(indices.size() * dim_);
    for (std::size_t i : indices) out.add(d_[i], y_[i], x(i));
    auto pick = [&](const std::optional<std::vector<double>>& src) {
      std::optional<std::vector<double>> dst;
      if (src) {
        dst.emplace();
        dst->reserve(indices.size());
        for (std::size_t i : indices) dst->push_back((*src)[i]);
      }
      return dst;
    };
    out.true_e_ = pick(true_e_);
    out.true_mu_ = pick(true_mu_);
    out.true_mu0_ = pick(true_mu0_);
    return out;
  }

  /// The control arm seen as a "treated" arm: D' = 1 - D, e' = 1 - e and
  /// the outcome-mean annotation swapped for the control-arm mean.
  Dataset flipped() const {
    Dataset out = *this;
    for (auto& di : out.d_) di = 1 - di;
    if (true_e_) {
      for (auto& e : *out.true_e_) e = 1.0 - e;
      // 1 - e can hit 0 where e = 1; keep it a valid propensity.
      for (auto& e : *out.true_e_) e = std::max(e, 1e-12);
    }
    out.true_mu_ = true_mu0_;
    out.true_mu0_ = true_mu_;
    return out;
  }

  /// Per-dimension [min, max] of the covariates.
  std::vector<std::pair<double, double>> bounding_box() const {
    std::vector<std::pair<double, double>> box(dim_, {0.0, 0.0});
    if (empty()) return box;
    for (std::size_t j = 0; j < dim_; ++j) box[j] = {x_[j], x_[j]};
    for (std::size_t i = 1; i < size(); ++i) {
      for (std::size_t j = 0; j < dim_; ++j) {
        const double v = x_[i * dim_ + j];
        box[j].first = std::min(box[j].first, v);
        box[j].second = std::max(box[j].second, v);
      }
    }
    return box;
  }

 private:
  void check_annotation(const std::vector<double>& v, const char* name) const {
    if (v.size() != size()) {
      throw InputError(std::string("Dataset: ") + name + " length does not match n");
    }
  }

  std::size_t dim_ = 1;
  std::vector<int> d_;
  std::vector<double> y_;
  std::vector<double> x_;
  std::optional<std::vector<double>> true_e_;
  std::optional<std::vector<double>> true_mu_;
  std::optional<std::vector<double>> true_mu0_;
};

/// Fold label per observation, 0-based.
struct FoldAssignment {
  std::vector<int> fold_of;
  int k = 0;

  std::vector<std::size_t> members(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == fold) out.push_back(i);
    }
    return out;
  }
  std::vector<std::size_t> complement(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] != fold) out.push_back(i);
    }
    return out;
  }
};

/// Random near-equal partition of {0..n-1} into k folds: Fisher-Yates
/// shuffle, then contiguous blocks of the shuffled order. The first n % k
/// blocks carry one extra member.
inline FoldAssignment assign_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<std::size_t>(k) > n) {
    throw DomainError("assign_folds: need 2 <= k <= n (k=" + std::to_string(k) +
                      ", n=" + std::to_string(n) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.uniform_index(i + 1)]);
  }
  FoldAssignment folds;
  folds.k = k;
  folds.fold_of.assign(n, 0);
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) folds.fold_of[order[pos++]] = f;
  }
  return folds;
}

enum class ThresholdMode { kClip, kTrim, kNone };
enum class ThresholdProvenance { kFixed, kAlgorithm1, kSmoothnessRule };

inline const char* to_string(ThresholdMode m) {
  switch (m) {
    case ThresholdMode::kClip: return "clip";
    case ThresholdMode::kTrim: return "trim";
    case ThresholdMode::kNone: return "none";
  }
  return "?";
}

inline const char* to_string(ThresholdProvenance p) {
  switch (p) {
    case ThresholdProvenance::kFixed: return "fixed";
    case ThresholdProvenance::kAlgorithm1: return "algorithm1";
    case ThresholdProvenance::kSmoothnessRule: return "smoothness_rule";
  }
  return "?";
}

/// How small propensities are handled. `b_upper` is a threshold on 1 - e_hat
/// and is consumed by the control arm of an ATE.
struct ThresholdSpec {
  ThresholdMode mode = ThresholdMode::kNone;
  double b_lower = 0.0;
  std::optional<double> b_upper;
  ThresholdProvenance provenance = ThresholdProvenance::kFixed;

  static ThresholdSpec none() { return {}; }
  static ThresholdSpec clip(double b) { return {ThresholdMode::kClip, b, std::nullopt, ThresholdProvenance::kFixed}; }
  static ThresholdSpec trim(double b) { return {ThresholdMode::kTrim, b, std::nullopt, ThresholdProvenance::kFixed}; }

  void validate() const {
    if (!(b_lower >= 0.0 && b_lower < 1.0)) {
      throw DomainError("ThresholdSpec: b_lower must lie in [0, 1)");
    }
    if (b_upper && !(*b_upper > 0.0 && *b_upper <= 1.0)) {
      throw DomainError("ThresholdSpec: b_upper must lie in (0, 1]");
    }
    if (mode == ThresholdMode::kNone && (b_lower != 0.0 || b_upper)) {
      throw DomainError("ThresholdSpec: mode none requires b_lower = 0 and no b_upper");
    }
  }

  /// The spec seen from the control arm: its lower threshold is b_upper.
  ThresholdSpec control_arm() const {
    ThresholdSpec out;
    out.mode = mode;
    out.provenance = provenance;
    if (mode != ThresholdMode::kNone && b_upper) {
      out.b_lower = std::min(*b_upper, std::nextafter(1.0, 0.0));
    }
    return out;
  }
};

struct Estimate {
  double psi_hat = 0.0;
  double sigma_hat = 0.0;
  std::size_t n = 0;
  std::size_t n_thresholded = 0;
  ThresholdSpec threshold;
};

}  // namespace drthresh

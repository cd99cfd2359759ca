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
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drthresh/core/error.hpp"

namespace drthresh {

/// Upper bound on a nuisance convergence rate. Either absent (null), a
/// constant already evaluated at the current n, or c * n^(-a).
class RateBound {
 public:
  RateBound() = default;

  static RateBound null() { return {}; }
  static RateBound constant(double value) {
    RateBound r;
    r.kind_ = Kind::kConstant;
    r.c_ = value;
    return r;
  }
  static RateBound power(double c, double a) {
    RateBound r;
    r.kind_ = Kind::kPower;
    r.c_ = c;
    r.a_ = a;
    return r;
  }

  bool is_null() const { return kind_ == Kind::kNull; }

  std::optional<double> at(std::size_t n) const {
    switch (kind_) {
      case Kind::kNull: return std::nullopt;
      case Kind::kConstant: return c_;
      case Kind::kPower: return c_ * std::pow(static_cast<double>(n), -a_);
    }
    return std::nullopt;
  }

 private:
  enum class Kind { kNull, kConstant, kPower };
  Kind kind_ = Kind::kNull;
  double c_ = 0.0;
  double a_ = 0.0;
};

/// error_bound(b) - n^(-1/2) from the rule-of-thumb threshold search.
/// Absent rate bounds are replaced by the putative threshold b itself.
inline double error_bound_diff(double b, std::span<const int> d, std::span<const double> e_hat,
                               std::optional<double> r_mu, std::optional<double> r_e) {
  if (d.size() != e_hat.size()) throw InputError("error_bound_diff: d and e_hat differ in length");
  if (d.empty()) throw DomainError("error_bound_diff: empty data");
  if (!(b > 0.0 && b <= 1.0)) throw DomainError("error_bound_diff: b must lie in (0, 1]");
  const auto n = static_cast<double>(d.size());
  const double rm = r_mu.value_or(b);
  const double re = r_e.value_or(b);
  double second_moment = 0.0;
  double below = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double w = std::max(e_hat[i], b);
    second_moment += d[i] / (w * w);
    if (e_hat[i] <= b) below += 1.0;
  }
  second_moment /= n;
  below /= n;
  if (!(second_moment > 0.0)) {
    throw DomainError("error_bound_diff: second moment is zero (no treated observations)");
  }
  const double root = std::sqrt(second_moment);
  return rm * below / root + rm * re * root - 1.0 / std::sqrt(n);
}

/// error_bound_diff over a fixed (d, e_hat) sample with O(log n) evaluation.
class ErrorBoundCurve {
 public:
  ErrorBoundCurve(std::span<const int> d, std::span<const double> e_hat) {
    if (d.size() != e_hat.size()) throw InputError("ErrorBoundCurve: d and e_hat differ in length");
    if (d.empty()) throw DomainError("ErrorBoundCurve: empty data");
    const std::size_t n = d.size();
    n_ = static_cast<double>(n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return e_hat[a] < e_hat[b]; });
    sorted_e_.resize(n);
    treated_prefix_.assign(n + 1, 0.0);
    inv_sq_suffix_.assign(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      sorted_e_[k] = e_hat[order[k]];
      treated_prefix_[k + 1] = treated_prefix_[k] + d[order[k]];
    }
    for (std::size_t k = n; k-- > 0;) {
      const double e = sorted_e_[k];
      inv_sq_suffix_[k] = inv_sq_suffix_[k + 1] + d[order[k]] / (e * e);
    }
  }

  std::size_t size() const { return sorted_e_.size(); }
  std::span<const double> sorted_propensities() const { return sorted_e_; }

  double second_moment(double b) const {
    const std::size_t k = lower(b);  // e < b is clipped up to b
    const double clipped = k > 0 ? treated_prefix_[k] / (b * b) : 0.0;
    return (clipped + inv_sq_suffix_[k]) / n_;
  }

  /// Value with the step part counted as #{e_hat <= b} (right-continuous).
  double value(double b, std::optional<double> r_mu, std::optional<double> r_e) const {
    return evaluate(b, static_cast<double>(upper(b)), r_mu, r_e);
  }

  /// Left limit at b: the step part counts #{e_hat < b}.
  double left_limit(double b, std::optional<double> r_mu, std::optional<double> r_e) const {
    return evaluate(b, static_cast<double>(lower(b)), r_mu, r_e);
  }

  /// Same formula with the count of e_hat <= b held fixed at `below`.
  double evaluate(double b, double below, std::optional<double> r_mu,
                  std::optional<double> r_e) const {
    const double rm = r_mu.value_or(b);
    const double re = r_e.value_or(b);
    const double sm = second_moment(b);
    if (!(sm > 0.0)) throw DomainError("error_bound_diff: second moment is zero (no treated observations)");
    const double root = std::sqrt(sm);
    return rm * (below / n_) / root + rm * re * root - 1.0 / std::sqrt(n_);
  }

  std::size_t lower(double b) const {
    return static_cast<std::size_t>(std::lower_bound(sorted_e_.begin(), sorted_e_.end(), b) - sorted_e_.begin());
  }
  std::size_t upper(double b) const {
    return static_cast<std::size_t>(std::upper_bound(sorted_e_.begin(), sorted_e_.end(), b) - sorted_e_.begin());
  }

 private:
  double n_ = 0.0;
  std::vector<double> sorted_e_;
  std::vector<double> treated_prefix_;
  std::vector<double> inv_sq_suffix_;
};

enum class ThresholdBranch {
  kPropensityBound,  // only a propensity rate given: b = that rate
  kCrossing,         // sign change inside a continuous piece
  kJump,             // sign change at a jump of the step part
  kSaturated,        // still <= 0 at b = 1
  kNoFeasible        // > 0 everywhere; smallest propensity returned
};

inline const char* to_string(ThresholdBranch b) {
  switch (b) {
    case ThresholdBranch::kPropensityBound: return "propensity-bound";
    case ThresholdBranch::kCrossing: return "crossing";
    case ThresholdBranch::kJump: return "jump";
    case ThresholdBranch::kSaturated: return "saturated";
    case ThresholdBranch::kNoFeasible: return "no-feasible";
  }
  return "?";
}

struct ThresholdChoice {
  double b = 1.0;
  ThresholdBranch branch = ThresholdBranch::kCrossing;
  bool saturated() const { return branch == ThresholdBranch::kSaturated; }
};

/// Data-driven threshold: sup { b in (0, 1] : error_bound_diff(b) <= 0 }.
///
/// With only a propensity rate bound the bound itself is returned. Otherwise
/// the breakpoints (distinct e_hat values) split (0, 1] into pieces on which
/// the function is continuous and increasing; scanning pieces from the right
/// finds the last one that dips to <= 0, and 50 bisection steps locate the
/// crossing inside it. A crossing that happens at a jump returns the jump
/// location. Outcomes are never used.
inline ThresholdChoice rule_of_thumb_threshold(std::span<const int> d, std::span<const double> e_hat,
                                               const RateBound& r_mu = RateBound::null(),
                                               const RateBound& r_e = RateBound::null()) {
  if (d.size() != e_hat.size()) throw InputError("rule_of_thumb_threshold: length mismatch");
  if (d.empty()) throw DomainError("rule_of_thumb_threshold: empty data");
  double inv_sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(e_hat[i] > 0.0 && e_hat[i] <= 1.0)) {
      throw DomainError("rule_of_thumb_threshold: propensities must lie in (0, 1]");
    }
    if (d[i] != 0 && d[i] != 1) throw DomainError("rule_of_thumb_threshold: treatment must be 0/1");
    inv_sum += d[i] / e_hat[i];
  }
  if (!(inv_sum > 0.0)) throw DomainError("rule_of_thumb_threshold: no treated observations");

  const std::size_t n = d.size();
  const auto rm = r_mu.at(n);
  const auto re = r_e.at(n);
  if (!rm && re) {
    if (!(*re > 0.0 && *re <= 1.0)) throw DomainError("rule_of_thumb_threshold: propensity rate bound outside (0, 1]");
    return {*re, ThresholdBranch::kPropensityBound};
  }

  const ErrorBoundCurve curve(d, e_hat);
  if (curve.value(1.0, rm, re) <= 0.0) return {1.0, ThresholdBranch::kSaturated};

  std::vector<double> knots;
  knots.push_back(0.0);
  for (double e : curve.sorted_propensities()) {
    if (e < 1.0 && e != knots.back()) knots.push_back(e);
  }
  knots.push_back(1.0);

  // Piece j is [knots[j], knots[j+1]); everything right of the current
  // piece is known to be > 0.
  for (std::size_t j = knots.size() - 1; j-- > 0;) {
    const double left = knots[j];
    const double right = knots[j + 1];
    const double below = static_cast<double>(curve.upper(left));
    const double at_right = curve.left_limit(right, rm, re);
    if (at_right <= 0.0) return {right, ThresholdBranch::kJump};
    // At the open left end of the first piece, evaluate just inside it.
    const double probe = j == 0 ? right * 1e-12 : left;
    if (curve.evaluate(probe, below, rm, re) > 0.0) continue;
    double lo = probe;
    double hi = right;
    for (int it = 0; it < 50; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (curve.evaluate(mid, below, rm, re) <= 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    return {lo, ThresholdBranch::kCrossing};
  }
  return {curve.sorted_propensities().front(), ThresholdBranch::kNoFeasible};
}

/// Threshold for the upper tail: the same rule applied to (1 - D, 1 - e_hat).
inline ThresholdChoice rule_of_thumb_upper_threshold(std::span<const int> d,
                                                     std::span<const double> e_hat,
                                                     const RateBound& r_mu = RateBound::null(),
                                                     const RateBound& r_e = RateBound::null()) {
  std::vector<int> flipped_d(d.size());
  std::vector<double> flipped_e(e_hat.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    flipped_d[i] = 1 - d[i];
    flipped_e[i] = std::max(1.0 - e_hat[i], 1e-12);
  }
  return rule_of_thumb_threshold(flipped_d, flipped_e, r_mu, r_e);
}

struct SmoothnessThreshold {
  double b = 0.0;
  double raw = 0.0;
  /// Raw value exceeded 0.5 and was capped.
  bool pre_asymptotic = false;
};

/// b = n^(-beta/(2 beta + d)) * log(n)^((3 beta + d)/(2 beta + d)), capped at 0.5.
inline SmoothnessThreshold threshold_from_smoothness(double beta_e, std::size_t dim, std::size_t n) {
  if (!(beta_e > 0.0)) throw DomainError("threshold_from_smoothness: beta_e must be positive");
  if (n < 3) throw DomainError("threshold_from_smoothness: need n >= 3");
  if (dim < 1) throw DomainError("threshold_from_smoothness: dimension must be >= 1");
  const double dd = static_cast<double>(dim);
  const double nn = static_cast<double>(n);
  const double denom = 2.0 * beta_e + dd;
  SmoothnessThreshold out;
  out.raw = std::pow(nn, -beta_e / denom) * std::pow(std::log(nn), (3.0 * beta_e + dd) / denom);
  out.pre_asymptotic = out.raw > 0.5;
  out.b = std::min(out.raw, 0.5);
  return out;
}

struct Feasibility {
  double margin = 0.0;
  bool feasible = false;
};

/// Smoothness/overlap feasibility: the left-hand side of
/// beta_mu(1-1/g)/(2 beta_mu(1-1/g) + d) + beta_e min(g/2, 1)/(2 beta_e + d) > 1/2
/// minus 1/2.
inline Feasibility smoothness_feasible(double beta_mu, double beta_e, std::size_t dim, double gamma0) {
  if (!(beta_mu > 0.0 && beta_e > 0.0)) throw DomainError("smoothness_feasible: smoothness orders must be positive");
  if (!(gamma0 > 1.0)) throw DomainError("smoothness_feasible: gamma0 must exceed 1");
  const double dd = static_cast<double>(dim);
  const double eff = beta_mu * (gamma0 - 1.0) / gamma0;
  const double lhs = eff / (2.0 * eff + dd) + beta_e * std::min(gamma0 / 2.0, 1.0) / (2.0 * beta_e + dd);
  Feasibility out;
  out.margin = lhs - 0.5;
  out.feasible = out.margin > 1e-12;
  return out;
}

struct GammaBound {
  double gamma = 0.0;
  double first = 0.0;
  double second = 0.0;
  /// 4 beta^2 <= d^2: the second expression gives no finite bound.
  bool infeasible = false;
};

/// Smallest weak-overlap order supported at common smoothness beta:
/// max{(2b^2 + 2bd + d^2)/(b(2b + d)), 4b^2/(4b^2 - d^2)}.
inline GammaBound min_gamma_supported(double beta, std::size_t dim) {
  if (!(beta > 0.0)) throw DomainError("min_gamma_supported: beta must be positive");
  const double dd = static_cast<double>(dim);
  GammaBound out;
  out.first = (2.0 * beta * beta + 2.0 * beta * dd + dd * dd) / (beta * (2.0 * beta + dd));
  const double denom = 4.0 * beta * beta - dd * dd;
  if (denom <= 0.0) {
    out.infeasible = true;
    out.second = std::numeric_limits<double>::infinity();
    out.gamma = std::numeric_limits<double>::infinity();
    return out;
  }
  out.second = 4.0 * beta * beta / denom;
  out.gamma = std::max(out.first, out.second);
  return out;
}

enum class Verdict { kPass, kWarn, kFail, kNotEvaluated };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kWarn: return "warn";
    case Verdict::kFail: return "fail";
    case Verdict::kNotEvaluated: return "not_evaluated";
  }
  return "?";
}

/// Heuristic finite-sample verdict for a quantity that should be << 1.
inline Verdict rate_verdict(double value) {
  if (value < 0.5) return Verdict::kPass;
  if (value <= 1.0) return Verdict::kWarn;
  return Verdict::kFail;
}

struct RateCondition {
  std::string name;
  std::optional<double> value;
  Verdict verdict = Verdict::kNotEvaluated;
};

struct RateDiagnostics {
  RateCondition known_threshold;     // r_e / b
  RateCondition product_of_errors;   // sqrt(n) r_mu r_e (1 + b^((g-2)/2) log(1/b)^(1{g=2}/2))
  RateCondition near_singularities;  // sqrt(n) r_mu b^(g/2)

  std::vector<const RateCondition*> all() const {
    return {&known_threshold, &product_of_errors, &near_singularities};
  }
};

/// Finite-sample analogues of the minimal-rate conditions at threshold b.
/// The gamma-dependent ones need gamma0; without it they are not evaluated.
inline RateDiagnostics check_rate_conditions(double b, double r_mu, double r_e, std::size_t n,
                                             std::optional<double> gamma0) {
  if (!(b > 0.0 && b <= 1.0)) throw DomainError("check_rate_conditions: b must lie in (0, 1]");
  RateDiagnostics out;
  out.known_threshold.name = "asymptotically_known_thresholding";
  out.product_of_errors.name = "product_of_errors";
  out.near_singularities.name = "regression_error_near_singularities";

  out.known_threshold.value = r_e / b;
  out.known_threshold.verdict = rate_verdict(*out.known_threshold.value);
  if (gamma0) {
    const double g = *gamma0;
    const double root_n = std::sqrt(static_cast<double>(n));
    double tail = std::pow(b, (g - 2.0) / 2.0);
    if (g == 2.0) tail *= std::sqrt(std::log(1.0 / b));
    out.product_of_errors.value = root_n * r_mu * r_e * (1.0 + tail);
    out.product_of_errors.verdict = rate_verdict(*out.product_of_errors.value);
    out.near_singularities.value = root_n * r_mu * std::pow(b, g / 2.0);
    out.near_singularities.verdict = rate_verdict(*out.near_singularities.value);
  }
  return out;
}

}  // namespace drthresh

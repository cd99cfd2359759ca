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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drthresh/core/error.hpp"
#include "drthresh/core/rng.hpp"
#include "drthresh/core/stats.hpp"
#include "drthresh/core/types.hpp"
#include "drthresh/nuisance/cross_fit.hpp"
#include "drthresh/threshold.hpp"

namespace drthresh {

/// Doubly robust score of one observation.
///
///   clip: mu + d (y - mu) / max(e, b)
///   trim: mu + 1{e >= b} d (y - mu) / e
///   none: clip with b = 0
///
/// Trimming zeroes the inverse-propensity correction but keeps mu, so the
/// estimator stays a mean over all n scores.
inline double pseudo_outcome(int d, double y, double mu_hat, double e_hat, const ThresholdSpec& spec) {
  if (d == 0) return mu_hat;
  const double residual = y - mu_hat;
  switch (spec.mode) {
    case ThresholdMode::kNone:
    case ThresholdMode::kClip: {
      const double b = spec.mode == ThresholdMode::kNone ? 0.0 : spec.b_lower;
      const double w = std::max(e_hat, b);
      if (!(w > 0.0)) throw DomainError("pseudo_outcome: propensity must be positive when unthresholded");
      return mu_hat + residual / w;
    }
    case ThresholdMode::kTrim:
      if (e_hat >= spec.b_lower && e_hat > 0.0) return mu_hat + residual / e_hat;
      if (e_hat >= spec.b_lower) throw DomainError("pseudo_outcome: propensity must be positive when untrimmed");
      return mu_hat;
  }
  return mu_hat;
}

/// Observations whose propensity falls below the lower threshold.
inline std::size_t count_thresholded(std::span<const double> e_hat, const ThresholdSpec& spec) {
  if (spec.mode == ThresholdMode::kNone) return 0;
  return static_cast<std::size_t>(
      std::count_if(e_hat.begin(), e_hat.end(), [&](double e) { return e < spec.b_lower; }));
}

/// Mean and n^{-1/2} times the population (divisor n) standard deviation.
inline Estimate estimate_from_scores(std::span<const double> scores, const ThresholdSpec& spec,
                                     std::size_t n_thresholded) {
  if (scores.size() < 2) throw DomainError("estimate: need n >= 2");
  const auto n = static_cast<double>(scores.size());
  double s = 0.0, ss = 0.0;
  for (double v : scores) s += v;
  const double m = s / n;
  for (double v : scores) ss += (v - m) * (v - m);
  Estimate est;
  est.psi_hat = m;
  est.sigma_hat = std::sqrt(ss / n) / std::sqrt(n);
  est.n = scores.size();
  est.n_thresholded = n_thresholded;
  est.threshold = spec;
  if (!std::isfinite(est.psi_hat) || !std::isfinite(est.sigma_hat)) {
    throw NumericalError("estimate: non-finite estimate");
  }
  return est;
}

inline std::vector<double> pseudo_outcomes(const Dataset& data, std::span<const double> mu_hat,
                                           std::span<const double> e_hat, const ThresholdSpec& spec) {
  if (mu_hat.size() != data.size() || e_hat.size() != data.size()) {
    throw InputError("pseudo_outcomes: nuisance length does not match the dataset");
  }
  spec.validate();
  std::vector<double> phi(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    phi[i] = pseudo_outcome(data.d(i), data.y(i), mu_hat[i], e_hat[i], spec);
  }
  return phi;
}

/// Thresholded AIPW estimate of the treated-arm average potential outcome.
inline Estimate estimate_apo(const Dataset& data, const CrossFitNuisances& nuisances,
                             const ThresholdSpec& spec) {
  const auto phi = pseudo_outcomes(data, nuisances.mu_hat, nuisances.e_hat, spec);
  return estimate_from_scores(phi, spec, count_thresholded(nuisances.e_hat, spec));
}

inline std::vector<double> ipw_terms(const Dataset& data, std::span<const double> e_hat,
                                     const ThresholdSpec& spec) {
  const std::vector<double> zero(data.size(), 0.0);
  return pseudo_outcomes(data, zero, e_hat, spec);
}

/// Thresholded IPW: the AIPW score with mu_hat = 0.
inline Estimate estimate_apo_ipw(const Dataset& data, std::span<const double> e_hat,
                                 const ThresholdSpec& spec) {
  const auto terms = ipw_terms(data, e_hat, spec);
  return estimate_from_scores(terms, spec, count_thresholded(e_hat, spec));
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return lo <= v && v <= hi; }
};

/// Wald interval [psi + z_{alpha/2} sigma, psi + z_{1-alpha/2} sigma].
inline Interval wald_ci(const Estimate& est, double alpha) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw DomainError("wald_ci: alpha must lie in (0, 0.5)");
  if (est.sigma_hat < 0.0) throw DomainError("wald_ci: negative sigma_hat");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  return {est.psi_hat - z * est.sigma_hat, est.psi_hat + z * est.sigma_hat};
}

/// 2 (1 - Phi(|psi - psi0| / sigma)); sigma = 0 gives 1 at the null, else 0.
inline double two_sided_pvalue(const Estimate& est, double null_value) {
  const double gap = std::abs(est.psi_hat - null_value);
  if (est.sigma_hat == 0.0) return gap == 0.0 ? 1.0 : 0.0;
  // erfc keeps precision in the upper tail.
  return std::erfc(gap / est.sigma_hat / std::numbers::sqrt2);
}

struct ATEEstimate {
  double ate = 0.0;
  double se = 0.0;
  Estimate arm1;
  Estimate arm0;
};

/// ATE = APO(treated) - APO(control). The control arm uses 1 - e_hat, the
/// control outcome regression and the spec's upper threshold. The standard
/// error is that of the per-observation score difference.
inline ATEEstimate estimate_ate(const Dataset& data, const CrossFitNuisances& treated_arm,
                                const CrossFitNuisances& control_arm, const ThresholdSpec& spec) {
  if (data.treated_count() == 0 || data.treated_count() == data.size()) {
    throw DegenerateDataError("estimate_ate: both arms need at least one observation");
  }
  const Dataset flipped = data.flipped();
  const ThresholdSpec control_spec = spec.control_arm();
  const auto phi1 = pseudo_outcomes(data, treated_arm.mu_hat, treated_arm.e_hat, spec);
  const auto phi0 = pseudo_outcomes(flipped, control_arm.mu_hat, control_arm.e_hat, control_spec);
  ATEEstimate out;
  out.arm1 = estimate_from_scores(phi1, spec, count_thresholded(treated_arm.e_hat, spec));
  out.arm0 = estimate_from_scores(phi0, control_spec, count_thresholded(control_arm.e_hat, control_spec));
  std::vector<double> diff(phi1.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = phi1[i] - phi0[i];
  const Estimate d = estimate_from_scores(diff, spec, 0);
  out.ate = out.arm1.psi_hat - out.arm0.psi_hat;
  out.se = d.sigma_hat;
  return out;
}

/// Estimate-shaped view of an ATE (for intervals and p-values).
inline Estimate as_estimate(const ATEEstimate& ate) {
  Estimate e = ate.arm1;
  e.psi_hat = ate.ate;
  e.sigma_hat = ate.se;
  e.n_thresholded = ate.arm1.n_thresholded + ate.arm0.n_thresholded;
  return e;
}

struct TrimmedSample {
  Dataset data;
  std::vector<std::size_t> kept;
};

/// Observations with lo <= e_hat <= hi, in their original order.
inline TrimmedSample fixed_trim_sample(const Dataset& data, std::span<const double> e_hat,
                                       double lo, double hi) {
  if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) throw DomainError("fixed_trim_sample: need 0 <= lo < hi <= 1");
  if (e_hat.size() != data.size()) throw InputError("fixed_trim_sample: e_hat length mismatch");
  TrimmedSample out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (lo <= e_hat[i] && e_hat[i] <= hi) out.kept.push_back(i);
  }
  if (out.kept.empty()) throw DegenerateDataError("fixed_trim_sample: no observations in [lo, hi]");
  out.data = data.subset(out.kept);
  return out;
}

// ---------------------------------------------------------------------------
// Estimation pipeline: cross-fit, choose a threshold, estimate.

enum class ThresholdRule { kFixed, kAlgorithm1, kSmoothness };
enum class Target { kApo, kAte };

struct ThresholdSelector {
  ThresholdRule rule = ThresholdRule::kAlgorithm1;
  double fixed_b = 0.0;
  RateBound r_mu;
  RateBound r_e;
  double beta_e = 1.0;
  /// Also threshold 1 - e_hat (control arm of an ATE).
  bool upper = false;
};

struct PipelineConfig {
  int folds = 5;
  PropensityMethod propensity = PropensityMethod::logistic();
  OutcomeMethod outcome = OutcomeMethod::local_linear();
  ThresholdMode mode = ThresholdMode::kClip;
  ThresholdSelector selector;
  Target target = Target::kApo;
};

struct ThresholdSelection {
  ThresholdSpec spec;
  std::optional<ThresholdChoice> lower_choice;
  std::optional<ThresholdChoice> upper_choice;
  std::optional<SmoothnessThreshold> smoothness;
};

inline ThresholdSelection select_threshold(const ThresholdSelector& sel, ThresholdMode mode,
                                           std::span<const int> d, std::span<const double> e_hat,
                                           std::size_t dim) {
  ThresholdSelection out;
  out.spec.mode = mode;
  if (mode == ThresholdMode::kNone) return out;
  switch (sel.rule) {
    case ThresholdRule::kFixed:
      out.spec.provenance = ThresholdProvenance::kFixed;
      out.spec.b_lower = sel.fixed_b;
      if (sel.upper) out.spec.b_upper = std::max(sel.fixed_b, 1e-300);
      break;
    case ThresholdRule::kAlgorithm1: {
      out.spec.provenance = ThresholdProvenance::kAlgorithm1;
      out.lower_choice = rule_of_thumb_threshold(d, e_hat, sel.r_mu, sel.r_e);
      out.spec.b_lower = std::min(out.lower_choice->b, std::nextafter(1.0, 0.0));
      if (sel.upper) {
        out.upper_choice = rule_of_thumb_upper_threshold(d, e_hat, sel.r_mu, sel.r_e);
        out.spec.b_upper = out.upper_choice->b;
      }
      break;
    }
    case ThresholdRule::kSmoothness: {
      out.spec.provenance = ThresholdProvenance::kSmoothnessRule;
      out.smoothness = threshold_from_smoothness(sel.beta_e, dim, d.size());
      out.spec.b_lower = out.smoothness->b;
      if (sel.upper) out.spec.b_upper = out.smoothness->b;
      break;
    }
  }
  return out;
}

struct PipelineResult {
  CrossFitNuisances treated;
  std::optional<CrossFitNuisances> control;
  ThresholdSelection threshold;
  Estimate apo;
  std::optional<ATEEstimate> ate;

  /// The target quantity: the APO or the ATE.
  Estimate target_estimate() const { return ate ? as_estimate(*ate) : apo; }
};

inline PipelineResult run_pipeline(const Dataset& data, const FoldAssignment& folds,
                                   const PipelineConfig& config) {
  PipelineResult out;
  out.treated = cross_fit(data, folds, config.propensity, config.outcome);
  out.threshold = select_threshold(config.selector, config.mode, data.treatments(),
                                   out.treated.e_hat, data.dim());
  out.apo = estimate_apo(data, out.treated, out.threshold.spec);
  if (config.target == Target::kAte) {
    out.control = cross_fit_control_arm(data, out.treated, config.outcome);
    out.ate = estimate_ate(data, out.treated, *out.control, out.threshold.spec);
  }
  return out;
}

struct BootstrapResult {
  double se = 0.0;
  std::size_t skipped = 0;
  std::vector<double> estimates;
};

/// Nonparametric bootstrap of the whole pipeline. Each resampled
/// observation keeps the fold label of its source row.
inline BootstrapResult bootstrap_se(const Dataset& data, const FoldAssignment& folds,
                                    const PipelineConfig& config, int b_reps, std::uint64_t seed) {
  if (b_reps < 2) throw DomainError("bootstrap_se: need at least 2 replicates");
  if (folds.fold_of.size() != data.size()) throw InputError("bootstrap_se: fold assignment mismatch");
  BootstrapResult out;
  const Rng root(seed);
  const std::size_t n = data.size();
  for (int r = 0; r < b_reps; ++r) {
    Rng rng = root.split(static_cast<std::uint64_t>(r));
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = rng.uniform_index(n);
    FoldAssignment boot_folds;
    boot_folds.k = folds.k;
    boot_folds.fold_of.resize(n);
    for (std::size_t j = 0; j < n; ++j) boot_folds.fold_of[j] = folds.fold_of[idx[j]];
    try {
      const auto res = run_pipeline(data.subset(idx), boot_folds, config);
      out.estimates.push_back(res.target_estimate().psi_hat);
    } catch (const DegenerateDataError&) {
      ++out.skipped;
    } catch (const DomainError&) {
      ++out.skipped;
    }
  }
  if (static_cast<double>(out.skipped) > 0.2 * b_reps) {
    throw DegenerateDataError("bootstrap_se: " + std::to_string(out.skipped) + " of " +
                              std::to_string(b_reps) + " replicates were degenerate");
  }
  if (out.estimates.size() < 2) throw DegenerateDataError("bootstrap_se: fewer than 2 usable replicates");
  out.se = stddev(out.estimates, 1);
  return out;
}

}  // namespace drthresh

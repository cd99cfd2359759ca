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
#include <charconv>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drthresh/cli/ingest.hpp"
#include "drthresh/core/error.hpp"
#include "drthresh/estimators.hpp"
#include "drthresh/simulation.hpp"
#include "drthresh/simulation_io.hpp"
#include "drthresh/threshold.hpp"

namespace drthresh::cli {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Process exit status for an error.
inline int exit_code_for(const Error& e) { return drthresh::exit_code(e.kind()); }

// ---------------------------------------------------------------------------
// Flag value parsers

inline double parse_double(const std::string& s, const std::string& what) {
  const auto v = detail::parse_number(detail::trim(s));
  if (!v) throw InputError(what + ": '" + s + "' is not a number");
  return *v;
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// "none", a constant such as "0.07", or "n^-a" / "c*n^-a".
inline RateBound parse_rate_bound(const std::string& text) {
  const std::string s = detail::trim(text);
  if (s == "none" || s.empty()) return RateBound::null();
  const auto pos = s.find("n^");
  if (pos == std::string::npos) {
    const double v = parse_double(s, "rate bound");
    if (!(v > 0.0)) throw DomainError("rate bound must be positive");
    return RateBound::constant(v);
  }
  double c = 1.0;
  if (pos > 0) {
    std::string head = s.substr(0, pos);
    if (head.back() != '*') throw InputError("rate bound: expected c*n^-a, got '" + s + "'");
    head.pop_back();
    c = parse_double(head, "rate bound constant");
  }
  const double expo = parse_double(s.substr(pos + 2), "rate bound exponent");
  if (!(c > 0.0)) throw DomainError("rate bound constant must be positive");
  return RateBound::power(c, -expo);
}

/// "auto" (rule of thumb), "smoothness:<beta_e>", or a fixed threshold.
inline ThresholdSelector parse_threshold(const std::string& text) {
  ThresholdSelector sel;
  const std::string s = detail::trim(text);
  if (s == "auto") {
    sel.rule = ThresholdRule::kAlgorithm1;
  } else if (s.rfind("smoothness:", 0) == 0) {
    sel.rule = ThresholdRule::kSmoothness;
    sel.beta_e = parse_double(s.substr(11), "smoothness order");
    if (!(sel.beta_e > 0.0)) throw DomainError("smoothness order must be positive");
  } else {
    sel.rule = ThresholdRule::kFixed;
    sel.fixed_b = parse_double(s, "threshold");
    if (!(sel.fixed_b >= 0.0 && sel.fixed_b < 1.0)) throw DomainError("fixed threshold must lie in [0, 1)");
  }
  return sel;
}

inline ThresholdMode parse_mode(const std::string& s) {
  if (s == "clip") return ThresholdMode::kClip;
  if (s == "trim") return ThresholdMode::kTrim;
  if (s == "none") return ThresholdMode::kNone;
  throw InputError("unknown threshold mode '" + s + "' (clip, trim, none)");
}

inline Target parse_target(const std::string& s) {
  if (s == "apo") return Target::kApo;
  if (s == "ate") return Target::kAte;
  throw InputError("unknown target '" + s + "' (apo, ate)");
}

inline std::pair<double, double> parse_trim_pair(const std::string& s) {
  const auto parts = split_list(s);
  if (parts.size() != 2) throw InputError("--compare-trim expects lo,hi");
  return {parse_double(parts[0], "trim lower bound"), parse_double(parts[1], "trim upper bound")};
}

inline std::vector<EstimatorKind> parse_estimator_list(const std::string& s) {
  std::vector<EstimatorKind> out;
  for (const auto& name : split_list(s)) {
    const auto k = parse_estimator(name);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  if (out.empty()) throw InputError("no estimators given");
  return out;
}

inline Demean parse_demean(const std::string& s) {
  if (s == "analytic_zero") return Demean::kAnalyticZero;
  if (s == "verbatim_text") return Demean::kVerbatimText;
  throw InputError("unknown demean convention '" + s + "' (analytic_zero, verbatim_text)");
}

inline json optional_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

inline json interval_json(const Interval& ci, double alpha) {
  return {{"lo", ci.lo}, {"hi", ci.hi}, {"level", 1.0 - alpha}};
}

inline json estimate_json(const Estimate& e, double alpha) {
  return {{"estimate", e.psi_hat},
          {"sigma_hat", e.sigma_hat},
          {"n", e.n},
          {"n_thresholded", e.n_thresholded},
          {"ci", interval_json(wald_ci(e, alpha), alpha)}};
}

inline json diagnostics_json(const RateDiagnostics& diag) {
  json out = json::object();
  for (const RateCondition* c : diag.all()) {
    out[c->name] = {{"value", optional_json(c->value)}, {"verdict", to_string(c->verdict)}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateOptions {
  IngestOptions ingest;
  std::string threshold = "auto";
  std::string mode = "clip";
  std::string target = "ate";
  std::string r_mu = "none";
  std::string r_e = "none";
  int folds = 5;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  int bootstrap = 0;
  std::optional<std::string> compare_trim;
  /// Outcome regression bandwidth; absent means n_train^(-1/5).
  std::optional<double> bandwidth;
};

inline PipelineConfig pipeline_config(const EstimateOptions& opt) {
  PipelineConfig cfg;
  cfg.folds = opt.folds;
  cfg.mode = parse_mode(opt.mode);
  cfg.target = parse_target(opt.target);
  cfg.selector = parse_threshold(opt.threshold);
  cfg.selector.r_mu = parse_rate_bound(opt.r_mu);
  cfg.selector.r_e = parse_rate_bound(opt.r_e);
  cfg.selector.upper = cfg.target == Target::kAte;
  cfg.outcome.bandwidth = opt.bandwidth;
  return cfg;
}

inline json choice_json(const std::optional<ThresholdChoice>& c) {
  if (!c) return nullptr;
  return {{"b", c->b}, {"branch", to_string(c->branch)}};
}

/// Cross-fit, threshold, estimate; optional bootstrap and fixed-trim comparison.
inline json run_estimate(const Dataset& data, const EstimateOptions& opt) {
  if (!(opt.alpha > 0.0 && opt.alpha < 0.5)) throw DomainError("alpha must lie in (0, 0.5)");
  const PipelineConfig cfg = pipeline_config(opt);
  const FoldAssignment folds = assign_folds(data.size(), cfg.folds, opt.seed);
  const PipelineResult res = run_pipeline(data, folds, cfg);
  const Estimate target = res.target_estimate();
  const auto& spec = res.threshold.spec;

  json thr = {{"rule", to_string(spec.provenance)},
              {"mode", to_string(spec.mode)},
              {"b_lower", spec.b_lower},
              {"b_upper", optional_json(spec.b_upper)},
              {"lower", choice_json(res.threshold.lower_choice)},
              {"upper", choice_json(res.threshold.upper_choice)},
              {"n_thresholded", target.n_thresholded}};
  if (res.threshold.smoothness) {
    thr["smoothness"] = {{"beta_e", cfg.selector.beta_e},
                         {"raw", res.threshold.smoothness->raw},
                         {"pre_asymptotic", res.threshold.smoothness->pre_asymptotic}};
  }

  json out = {{"schema_version", kSchemaVersion},
              {"command", "estimate"},
              {"seed", opt.seed},
              {"n", data.size()},
              {"dim", data.dim()},
              {"folds", cfg.folds},
              {"target", opt.target},
              {"alpha", opt.alpha},
              {"nuisance", {{"propensity", cfg.propensity.describe()}, {"outcome", cfg.outcome.describe()}}},
              {"threshold", thr},
              {"estimate", target.psi_hat},
              {"sigma_hat", target.sigma_hat},
              {"ci", interval_json(wald_ci(target, opt.alpha), opt.alpha)}};
  if (res.ate) {
    out["arms"] = {{"treated", estimate_json(res.ate->arm1, opt.alpha)},
                   {"control", estimate_json(res.ate->arm0, opt.alpha)}};
  }
  if (opt.bootstrap > 0) {
    const auto boot = bootstrap_se(data, folds, cfg, opt.bootstrap, derive_seed(opt.seed, 0xB007));
    out["bootstrap"] = {{"reps", opt.bootstrap}, {"se", boot.se}, {"skipped", boot.skipped}};
  }
  if (opt.compare_trim) {
    const auto [lo, hi] = parse_trim_pair(*opt.compare_trim);
    const TrimmedSample trimmed = fixed_trim_sample(data, res.treated.e_hat, lo, hi);
    auto restrict = [&](const CrossFitNuisances& nu) {
      CrossFitNuisances r;
      for (std::size_t i : trimmed.kept) {
        r.e_hat.push_back(nu.e_hat[i]);
        r.mu_hat.push_back(nu.mu_hat[i]);
      }
      return r;
    };
    // Same nuisance estimates, unthresholded AIPW on the retained sample.
    const ThresholdSpec none = ThresholdSpec::none();
    Estimate trimmed_est;
    if (res.control) {
      trimmed_est = as_estimate(estimate_ate(trimmed.data, restrict(res.treated), restrict(*res.control), none));
    } else {
      trimmed_est = estimate_apo(trimmed.data, restrict(res.treated), none);
    }
    out["compare_trim"] = {{"lo", lo},
                           {"hi", hi},
                           {"n_kept", trimmed.kept.size()},
                           {"n_dropped", data.size() - trimmed.kept.size()},
                           {"estimate", trimmed_est.psi_hat},
                           {"sigma_hat", trimmed_est.sigma_hat},
                           {"ci", interval_json(wald_ci(trimmed_est, opt.alpha), opt.alpha)},
                           {"full_population",
                            {{"estimate", target.psi_hat},
                             {"sigma_hat", target.sigma_hat},
                             {"ci", interval_json(wald_ci(target, opt.alpha), opt.alpha)}}}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// threshold

struct ThresholdOptions {
  IngestOptions ingest;
  /// Column of supplied propensities; absent means cross-fitted logistic.
  std::optional<std::string> propensity_col;
  std::string r_mu = "none";
  std::string r_e = "none";
  bool upper = false;
  std::optional<double> gamma0;
  int folds = 5;
  std::uint64_t seed = 1;
  int curve_points = 200;
};

inline std::vector<double> fitted_propensities(const Dataset& data, int folds, std::uint64_t seed) {
  OutcomeMethod om = OutcomeMethod::constant_mean();
  return cross_fit(data, folds, PropensityMethod::logistic(), om, seed).e_hat;
}

/// Rule-of-thumb curve sampled on an even grid over [min e_hat, 1], plus b*.
inline json threshold_curve(std::span<const int> d, std::span<const double> e_hat,
                            std::optional<double> r_mu, std::optional<double> r_e, double b_star,
                            int points) {
  const ErrorBoundCurve curve(d, e_hat);
  const double lo = curve.sorted_propensities().front();
  std::vector<double> grid;
  const int even = std::max(points - 1, 1);
  for (int k = 0; k < even; ++k) {
    grid.push_back(even == 1 ? 1.0 : lo + (1.0 - lo) * k / (even - 1));
  }
  grid.push_back(b_star);
  std::sort(grid.begin(), grid.end());
  json out = json::array();
  for (double b : grid) {
    out.push_back({{"b", b}, {"value", curve.value(b, r_mu, r_e)}, {"left_limit", curve.left_limit(b, r_mu, r_e)}});
  }
  return out;
}

inline json run_threshold(std::span<const int> d, std::span<const double> e_hat,
                          const ThresholdOptions& opt, const std::string& source) {
  const RateBound r_mu = parse_rate_bound(opt.r_mu);
  const RateBound r_e = parse_rate_bound(opt.r_e);
  const std::size_t n = d.size();
  const ThresholdChoice choice = rule_of_thumb_threshold(d, e_hat, r_mu, r_e);
  const auto rm = r_mu.at(n);
  const auto re = r_e.at(n);

  json out = {{"schema_version", kSchemaVersion},
              {"command", "threshold"},
              {"n", n},
              {"propensity_source", source},
              {"r_mu", optional_json(rm)},
              {"r_e", optional_json(re)},
              {"b", choice.b},
              {"branch", to_string(choice.branch)},
              {"n_thresholded", std::count_if(e_hat.begin(), e_hat.end(), [&](double e) { return e < choice.b; })}};
  if (source == "cross-fitted logistic") out["seed"] = opt.seed;
  if (choice.branch == ThresholdBranch::kPropensityBound) {
    out["curve"] = json::array();
  } else {
    out["curve"] = threshold_curve(d, e_hat, rm, re, choice.b, opt.curve_points);
  }
  // Absent bounds stand in as b, exactly as in the rule itself.
  const double b_eff = std::clamp(choice.b, std::numeric_limits<double>::min(), 1.0);
  out["diagnostics"] = diagnostics_json(check_rate_conditions(b_eff, rm.value_or(b_eff), re.value_or(b_eff), n, opt.gamma0));
  out["gamma0"] = optional_json(opt.gamma0);
  if (opt.upper) {
    const ThresholdChoice up = rule_of_thumb_upper_threshold(d, e_hat, r_mu, r_e);
    out["upper"] = {{"b", up.b},
                    {"branch", to_string(up.branch)},
                    {"n_thresholded",
                     std::count_if(e_hat.begin(), e_hat.end(), [&](double e) { return 1.0 - e < up.b; })}};
  }
  return out;
}

inline json run_threshold(const IngestResult& in, const ThresholdOptions& opt) {
  if (opt.propensity_col) {
    const auto& e = in.extra.at(*opt.propensity_col);
    return run_threshold(in.data.treatments(), e, opt, "column:" + *opt.propensity_col);
  }
  const auto e = fitted_propensities(in.data, opt.folds, opt.seed);
  return run_threshold(in.data.treatments(), e, opt, "cross-fitted logistic");
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  double gamma0 = 1.8;
  double kappa = 2.0;
  std::string demean = "analytic_zero";
  std::size_t n = 1000;
  int reps = 100;
  std::string estimators = "clipped-aipw";
  std::string nuisance = "oracle";
  std::string threshold = "auto";
  std::string r_mu = "n^-0.2";
  std::string r_e = "none";
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int threads = 0;
  /// Output directory for replications.csv and summary.json.
  std::optional<std::string> out;
};

inline MonteCarloConfig monte_carlo_config(const SimulateOptions& opt) {
  MonteCarloConfig c;
  c.dgp.gamma0 = opt.gamma0;
  c.dgp.kappa = opt.kappa;
  c.dgp.demean = parse_demean(opt.demean);
  c.n = opt.n;
  c.reps = opt.reps;
  c.estimators = parse_estimator_list(opt.estimators);
  c.nuisance = parse_nuisance_mode(opt.nuisance);
  const ThresholdSelector sel = parse_threshold(opt.threshold);
  if (sel.rule == ThresholdRule::kSmoothness) throw InputError("simulate: --threshold takes auto or a number");
  c.threshold.rule = sel.rule;
  c.threshold.fixed_b = sel.fixed_b;
  c.threshold.r_mu = parse_rate_bound(opt.r_mu);
  c.threshold.r_e = parse_rate_bound(opt.r_e);
  c.alpha = opt.alpha;
  c.master_seed = opt.seed;
  c.threads = opt.threads;
  return c;
}

inline json run_simulate(const SimulateOptions& opt) {
  const MonteCarloReport report = run_monte_carlo(monte_carlo_config(opt));
  json summary = summary_json(report);
  if (opt.out) {
    std::filesystem::create_directories(*opt.out);
    const auto dir = std::filesystem::path(*opt.out);
    write_text_file((dir / "replications.csv").string(), replications_csv(report));
    write_text_file((dir / "summary.json").string(), summary.dump(2) + "\n");
  }
  return summary;
}

// ---------------------------------------------------------------------------
// rate-experiment

struct RateExperimentOptions {
  double beta_mu = 1.0;
  double gamma0 = 2.0;
  std::string ns = "1000,4000,16000,64000";
  int reps = 20;
  std::uint64_t seed = 1;
  /// Output directory for rate.csv and rate.json.
  std::optional<std::string> out;
};

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    const double v = parse_double(item, "sample size");
    if (!(v >= 1.0) || v != std::floor(v)) throw InputError("sample size '" + item + "' is not a positive integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline std::string rate_csv(const RateExperimentResult& r) {
  std::string out = "n,median_sup_error\n";
  for (std::size_t i = 0; i < r.ns.size(); ++i) {
    out += std::to_string(r.ns[i]) + ',' + format_double(r.median_error[i]) + '\n';
  }
  return out;
}

inline json run_rate_experiment(const RateExperimentOptions& opt) {
  const auto ns = parse_sizes(opt.ns);
  const RateExperimentResult r = rate_experiment(opt.beta_mu, opt.gamma0, ns, opt.reps, opt.seed);
  json out = {{"schema_version", kSchemaVersion},
              {"command", "rate-experiment"},
              {"seed", opt.seed},
              {"beta_mu", opt.beta_mu},
              {"gamma0", opt.gamma0},
              {"dim", 1},
              {"reps", opt.reps},
              {"ns", r.ns},
              {"median_sup_error", r.median_error},
              {"slope", r.slope_undefined ? json(nullptr) : json(r.slope)},
              {"slope_undefined", r.slope_undefined},
              {"theoretical_exponent", r.theoretical_slope}};
  if (opt.out) {
    std::filesystem::create_directories(*opt.out);
    const auto dir = std::filesystem::path(*opt.out);
    write_text_file((dir / "rate.csv").string(), rate_csv(r));
    write_text_file((dir / "rate.json").string(), out.dump(2) + "\n");
  }
  return out;
}

}  // namespace drthresh::cli

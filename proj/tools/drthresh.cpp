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

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "drthresh/cli/commands.hpp"

namespace {

using drthresh::cli::IngestOptions;

void add_ingest_flags(CLI::App* cmd, IngestOptions& in, std::string& data, std::string& covariates) {
  cmd->add_option("--data", data, "Input CSV with a header row")->required();
  cmd->add_option("--treatment", in.treatment_col, "Treatment column (0/1 or true/false)")->capture_default_str();
  cmd->add_option("--outcome", in.outcome_col, "Outcome column")->capture_default_str();
  cmd->add_option("--covariates", covariates, "Comma-separated covariate columns, or auto")
      ->capture_default_str();
}

void apply_covariates(IngestOptions& in, const std::string& covariates) {
  if (covariates != "auto") in.covariate_cols = drthresh::cli::split_list(covariates);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thresholded doubly robust estimation under weak overlap"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // estimate
  drthresh::cli::EstimateOptions est;
  std::string est_data, est_cov = "auto";
  double est_bandwidth = 0.0;
  auto* c_est = app.add_subcommand("estimate", "Cross-fit nuisances, choose a threshold, estimate");
  add_ingest_flags(c_est, est.ingest, est_data, est_cov);
  c_est->add_option("--threshold", est.threshold, "auto | <b> | smoothness:<beta_e>")->capture_default_str();
  c_est->add_option("--mode", est.mode, "clip | trim | none")->capture_default_str();
  c_est->add_option("--target", est.target, "ate | apo")->capture_default_str();
  c_est->add_option("--r-mu", est.r_mu, "Outcome rate bound: none | <value> | [c*]n^-a")->capture_default_str();
  c_est->add_option("--r-e", est.r_e, "Propensity rate bound: none | <value> | [c*]n^-a")->capture_default_str();
  c_est->add_option("--folds", est.folds, "Cross-fitting folds")->capture_default_str()->check(CLI::Range(2, 1000));
  c_est->add_option("--seed", est.seed, "Seed for folds and bootstrap")->capture_default_str();
  c_est->add_option("--alpha", est.alpha, "Test level")->capture_default_str();
  c_est->add_option("--bootstrap", est.bootstrap, "Bootstrap replicates (0 = off)")->capture_default_str();
  c_est->add_option("--bandwidth", est_bandwidth, "Outcome regression bandwidth (default n^-1/5)");
  std::string compare_trim;
  c_est->add_option("--compare-trim", compare_trim, "Also estimate on lo <= e_hat <= hi, e.g. 0.1,0.9");

  // threshold
  drthresh::cli::ThresholdOptions thr;
  std::string thr_data, thr_cov = "auto", thr_e_col;
  double thr_gamma0 = 0.0;
  auto* c_thr = app.add_subcommand("threshold", "Rule-of-thumb threshold with its curve and diagnostics");
  add_ingest_flags(c_thr, thr.ingest, thr_data, thr_cov);
  c_thr->add_option("--propensity-col", thr_e_col, "Column of supplied propensities (default: cross-fitted logistic)");
  c_thr->add_option("--r-mu", thr.r_mu, "Outcome rate bound: none | <value> | [c*]n^-a")->capture_default_str();
  c_thr->add_option("--r-e", thr.r_e, "Propensity rate bound: none | <value> | [c*]n^-a")->capture_default_str();
  c_thr->add_flag("--upper", thr.upper, "Also report the threshold for 1 - e_hat");
  c_thr->add_option("--gamma0", thr_gamma0, "Tail order for the rate diagnostics");
  c_thr->add_option("--folds", thr.folds, "Cross-fitting folds")->capture_default_str()->check(CLI::Range(2, 1000));
  c_thr->add_option("--seed", thr.seed, "Fold seed")->capture_default_str();

  // simulate
  drthresh::cli::SimulateOptions sim;
  std::string sim_out;
  auto* c_sim = app.add_subcommand("simulate", "Monte Carlo study under the weak-overlap design");
  c_sim->add_option("--gamma", sim.gamma0, "Tail order gamma0 > 1")->capture_default_str();
  c_sim->add_option("--kappa", sim.kappa, "Signal scale")->capture_default_str();
  c_sim->add_option("--demean", sim.demean, "analytic_zero | verbatim_text")->capture_default_str();
  c_sim->add_option("--n", sim.n, "Sample size")->capture_default_str();
  c_sim->add_option("--reps", sim.reps, "Replications")->capture_default_str();
  c_sim->add_option("--estimators", sim.estimators,
                    "Comma list of aipw, ipw, clipped-aipw, clipped-ipw, trimmed-aipw, trimmed-ipw")
      ->capture_default_str();
  c_sim->add_option("--nuisance", sim.nuisance, "oracle | estimated | oracle-outcome | oracle-propensity")
      ->capture_default_str();
  c_sim->add_option("--threshold", sim.threshold, "auto | <b>")->capture_default_str();
  c_sim->add_option("--r-mu", sim.r_mu, "Outcome rate bound for auto")->capture_default_str();
  c_sim->add_option("--r-e", sim.r_e, "Propensity rate bound for auto")->capture_default_str();
  c_sim->add_option("--alpha", sim.alpha, "Test level")->capture_default_str();
  c_sim->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
  c_sim->add_option("--threads", sim.threads, "Worker threads (0 = all cores)")->capture_default_str();
  c_sim->add_option("--out", sim_out, "Directory for replications.csv and summary.json");

  // rate-experiment
  drthresh::cli::RateExperimentOptions rate;
  std::string rate_out;
  auto* c_rate = app.add_subcommand("rate-experiment", "Sup-norm error rate of the adaptive regressor");
  c_rate->add_option("--beta-mu", rate.beta_mu, "Assumed smoothness of mu")->capture_default_str();
  c_rate->add_option("--gamma0", rate.gamma0, "Tail order of the design")->capture_default_str();
  c_rate->add_option("--ns", rate.ns, "Comma list of increasing sample sizes")->capture_default_str();
  c_rate->add_option("--reps", rate.reps, "Replications per sample size")->capture_default_str();
  c_rate->add_option("--seed", rate.seed, "Seed")->capture_default_str();
  c_rate->add_option("--out", rate_out, "Directory for rate.csv and rate.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    nlohmann::json result;
    if (c_est->parsed()) {
      apply_covariates(est.ingest, est_cov);
      if (c_est->count("--bandwidth") > 0) est.bandwidth = est_bandwidth;
      if (!compare_trim.empty()) est.compare_trim = compare_trim;
      const auto in = drthresh::cli::ingest_csv(est_data, est.ingest);
      result = drthresh::cli::run_estimate(in.data, est);
      result["covariates"] = in.covariate_names;
      result["skipped_columns"] = in.skipped_columns;
    } else if (c_thr->parsed()) {
      apply_covariates(thr.ingest, thr_cov);
      if (!thr_e_col.empty()) {
        thr.propensity_col = thr_e_col;
        thr.ingest.extra_cols.push_back(thr_e_col);
      }
      if (c_thr->count("--gamma0") > 0) thr.gamma0 = thr_gamma0;
      const auto in = drthresh::cli::ingest_csv(thr_data, thr.ingest);
      result = drthresh::cli::run_threshold(in, thr);
      result["covariates"] = in.covariate_names;
    } else if (c_sim->parsed()) {
      if (!sim_out.empty()) sim.out = sim_out;
      result = drthresh::cli::run_simulate(sim);
    } else if (c_rate->parsed()) {
      if (!rate_out.empty()) rate.out = rate_out;
      result = drthresh::cli::run_rate_experiment(rate);
    }
    std::cout << result.dump(2) << '\n';
    return 0;
  } catch (const drthresh::cli::IngestError& e) {
    nlohmann::json err = {{"error", e.what()}, {"kind", drthresh::to_string(e.kind())}};
    if (e.row()) err["row"] = *e.row();
    if (!e.column().empty()) err["column"] = e.column();
    std::cerr << err.dump() << '\n';
    return drthresh::cli::exit_code_for(e);
  } catch (const drthresh::Error& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"kind", drthresh::to_string(e.kind())}}.dump() << '\n';
    return drthresh::cli::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"kind", "internal"}}.dump() << '\n';
    return 3;
  }
}

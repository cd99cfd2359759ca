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

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "drthresh/cli/commands.hpp"
#include "drthresh/cli/ingest.hpp"
#include "drthresh/simulation.hpp"

using namespace drthresh;
using namespace drthresh::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path tmp_dir() {
  const fs::path dir = fs::path(DRTHRESH_TEST_TMP) / ::testing::UnitTest::GetInstance()->current_test_info()->name();
  fs::create_directories(dir);
  return dir;
}

RunResult run_cli(const std::string& args) {
  const fs::path dir = tmp_dir();
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd =
      std::string("\"") + DRTHRESH_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string write_file(const std::string& name, const std::string& text) {
  const fs::path p = tmp_dir() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p.string();
}

std::string num(double v) { return format_double(v); }

// Design draw as CSV with an extra factor column and the true propensity.
std::string design_csv(std::size_t n, std::uint64_t seed, double gamma0 = 1.8) {
  DGPConfig dgp;
  dgp.gamma0 = gamma0;
  const Dataset data = draw_dataset(dgp, n, seed);
  std::string s = "d,y,x,site,e_true\n";
  const char* sites[] = {"north", "south", "east"};
  for (std::size_t i = 0; i < n; ++i) {
    s += std::to_string(data.d(i)) + ',' + num(data.y(i)) + ',' + num(data.x(i)[0]) + ',' + sites[i % 3] + ',' +
         num((*data.true_propensity())[i]) + '\n';
  }
  return s;
}

IngestOptions x_only() {
  IngestOptions o;
  o.covariate_cols = {"x"};
  return o;
}

// Every key of `lib` appears in `cli` with an identical value.
void expect_fields_equal(const json& cli, const json& lib, const std::string& where) {
  for (auto it = lib.begin(); it != lib.end(); ++it) {
    ASSERT_TRUE(cli.contains(it.key())) << where << ": missing " << it.key();
    EXPECT_EQ(cli[it.key()], it.value()) << where << ": field " << it.key();
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Ingestion

TEST(Ingest, ThreeRows) {
  const auto r = ingest_csv_text("d,y,x\n1,0.5,0.1\n0,1.5,0.2\n1,2.5,0.3\n", IngestOptions{});
  EXPECT_EQ(r.data.size(), 3u);
  EXPECT_EQ(r.data.dim(), 1u);
  EXPECT_EQ(r.data.d(0), 1);
  EXPECT_EQ(r.data.y(2), 2.5);
  EXPECT_EQ(r.data.x(1)[0], 0.2);
  EXPECT_EQ(r.covariate_names, std::vector<std::string>{"x"});
}

TEST(Ingest, NonBinaryTreatmentNamesRow) {
  try {
    ingest_csv_text("d,y,x\n1,0.5,0.1\n2,1.5,0.2\n", IngestOptions{});
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    ASSERT_TRUE(e.row().has_value());
    EXPECT_EQ(*e.row(), 2u);
    EXPECT_EQ(e.column(), "d");
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(Ingest, FactorWithThreeLevelsGivesTwoIndicators) {
  IngestOptions o;
  o.covariate_cols = {"x", "g"};
  const auto r = ingest_csv_text("d,y,x,g\n1,1,0.1,b\n0,2,0.2,a\n1,3,0.3,c\n0,4,0.4,a\n", o);
  EXPECT_EQ(r.data.dim(), 3u);
  EXPECT_EQ(r.covariate_names, (std::vector<std::string>{"x", "g=b", "g=c"}));
  // Reference level "a" is all zeros.
  EXPECT_EQ(r.data.x(1)[1], 0.0);
  EXPECT_EQ(r.data.x(1)[2], 0.0);
  EXPECT_EQ(r.data.x(0)[1], 1.0);
  EXPECT_EQ(r.data.x(2)[2], 1.0);
}

TEST(Ingest, AutoSkipsNonNumericColumns) {
  const auto r = ingest_csv_text("d,y,x,name,z\n1,1,0.1,ann,5\n0,2,0.2,bob,6\n", IngestOptions{});
  EXPECT_EQ(r.covariate_names, (std::vector<std::string>{"x", "z"}));
  EXPECT_EQ(r.skipped_columns, std::vector<std::string>{"name"});
}

TEST(Ingest, BooleanTreatmentCrlfAndBom) {
  const auto r = ingest_csv_text("\xEF\xBB\xBF" "d,y,x\r\nTRUE,1,0\r\nfalse,2,1\r\n", IngestOptions{});
  EXPECT_EQ(r.data.d(0), 1);
  EXPECT_EQ(r.data.d(1), 0);
}

TEST(Ingest, MissingValuesAndColumns) {
  try {
    ingest_csv_text("d,y,x\n1,,0.1\n0,2,NA\n", IngestOptions{});
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_EQ(*e.row(), 1u);
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
  IngestOptions o;
  o.outcome_col = "outcome";
  try {
    ingest_csv_text("d,y,x\n1,1,0.1\n", o);
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_EQ(e.column(), "outcome");
    EXPECT_FALSE(e.row().has_value());
  }
  EXPECT_THROW(ingest_csv_text("", IngestOptions{}), IngestError);
  EXPECT_THROW(ingest_csv_text("d,y,x\n1,2\n", IngestOptions{}), IngestError);
  EXPECT_THROW(ingest_csv("/nonexistent/file.csv", IngestOptions{}), IngestError);
}

TEST(Ingest, QuotedFields) {
  IngestOptions o;
  o.covariate_cols = {"x", "g"};
  const auto r = ingest_csv_text("d,y,x,g\n1,1,0.1,\"a, b\"\n0,2,0.2,\"c\"\n", o);
  EXPECT_EQ(r.covariate_names, std::vector<std::string>({"x", "g=c"}));
}

// ---------------------------------------------------------------------------
// Parsers

TEST(CliParse, RateBounds) {
  EXPECT_TRUE(parse_rate_bound("none").is_null());
  EXPECT_EQ(*parse_rate_bound("0.07").at(100), 0.07);
  EXPECT_NEAR(*parse_rate_bound("n^-0.5").at(100), 0.1, 1e-15);
  EXPECT_NEAR(*parse_rate_bound("2*n^-0.5").at(100), 0.2, 1e-15);
  EXPECT_THROW(parse_rate_bound("fast"), InputError);
}

TEST(CliParse, Thresholds) {
  EXPECT_EQ(parse_threshold("auto").rule, ThresholdRule::kAlgorithm1);
  const auto f = parse_threshold("0.05");
  EXPECT_EQ(f.rule, ThresholdRule::kFixed);
  EXPECT_EQ(f.fixed_b, 0.05);
  const auto s = parse_threshold("smoothness:2");
  EXPECT_EQ(s.rule, ThresholdRule::kSmoothness);
  EXPECT_EQ(s.beta_e, 2.0);
  EXPECT_THROW(parse_threshold("1.5"), Error);
}

// ---------------------------------------------------------------------------
// estimate

TEST(CliEstimate, MatchesLibraryOnRandomConfigs) {
  Rng rng(5);
  const char* thresholds[] = {"auto", "0", "0.05", "smoothness:1"};
  const char* modes[] = {"clip", "trim"};
  const char* targets[] = {"ate", "apo"};
  for (int k = 0; k < 10; ++k) {
    const std::size_t n = 200 + rng.uniform_index(400);
    const std::string path = write_file("data" + std::to_string(k) + ".csv", design_csv(n, 100 + k));
    EstimateOptions opt;
    opt.ingest = x_only();
    opt.threshold = thresholds[k % 4];
    opt.mode = modes[k % 2];
    opt.target = targets[(k / 2) % 2];
    opt.seed = 1 + rng.uniform_index(1000);
    opt.folds = 2 + static_cast<int>(rng.uniform_index(4));
    if (k % 3 == 0) opt.r_mu = "n^-0.2";
    const auto lib = run_estimate(ingest_csv(path, opt.ingest).data, opt);
    const std::string args = "estimate --data \"" + path + "\" --covariates x --threshold " + opt.threshold +
                             " --mode " + opt.mode + " --target " + opt.target + " --seed " +
                             std::to_string(opt.seed) + " --folds " + std::to_string(opt.folds) + " --r-mu " + opt.r_mu;
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << args << "\n" << r.err;
    expect_fields_equal(json::parse(r.out), lib, args);
  }
}

TEST(CliEstimate, ZeroThresholdIsUntrimmedAipw) {
  const std::string path = write_file("data.csv", design_csv(500, 7));
  const auto r = run_cli("estimate --data \"" + path + "\" --covariates x --threshold 0 --target apo --seed 3");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  const Dataset data = ingest_csv(path, x_only()).data;
  const auto nu = cross_fit(data, assign_folds(data.size(), 5, 3), PropensityMethod::logistic(),
                            OutcomeMethod::local_linear());
  const auto direct = estimate_apo(data, nu, ThresholdSpec::none());
  EXPECT_EQ(j["estimate"].get<double>(), direct.psi_hat);
  EXPECT_EQ(j["sigma_hat"].get<double>(), direct.sigma_hat);
  EXPECT_EQ(j["threshold"]["b_lower"].get<double>(), 0.0);
}

TEST(CliEstimate, CompareTrimAndDeterminism) {
  const std::string path = write_file("data.csv", design_csv(800, 8));
  const std::string args = "estimate --data \"" + path + "\" --covariates x --compare-trim 0.1,0.9 --seed 11";
  const auto a = run_cli(args);
  const auto b = run_cli(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const json j = json::parse(a.out);
  ASSERT_TRUE(j.contains("compare_trim"));
  const auto& ct = j["compare_trim"];
  EXPECT_EQ(ct["lo"], 0.1);
  EXPECT_EQ(ct["hi"], 0.9);
  EXPECT_EQ(ct["n_kept"].get<std::size_t>() + ct["n_dropped"].get<std::size_t>(), 800u);
  EXPECT_EQ(ct["full_population"]["estimate"], j["estimate"]);
  EXPECT_TRUE(ct.contains("estimate") && ct.contains("ci"));
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["seed"], 11);
  EXPECT_TRUE(j.contains("arms"));
}

TEST(CliEstimate, BootstrapReported) {
  const std::string path = write_file("data.csv", design_csv(300, 9));
  const auto r = run_cli("estimate --data \"" + path + "\" --covariates x --target apo --bootstrap 20");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["bootstrap"]["reps"], 20);
  EXPECT_GT(j["bootstrap"]["se"].get<double>(), 0.0);
}

// ---------------------------------------------------------------------------
// threshold

TEST(CliThreshold, PropensityBoundBranch) {
  const std::string path = write_file("data.csv", design_csv(300, 10));
  const auto r = run_cli("threshold --data \"" + path + "\" --covariates x --r-e 0.07 --r-mu none");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["b"], 0.07);
  EXPECT_EQ(j["branch"], "propensity-bound");
}

TEST(CliThreshold, CurveCertificateAndUpper) {
  const std::string path = write_file("data.csv", design_csv(400, 12));
  const auto r = run_cli("threshold --data \"" + path + "\" --covariates x --propensity-col e_true --upper --gamma0 1.8");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  const double b = j["b"];
  const auto& curve = j["curve"];
  EXPECT_EQ(curve.size(), 200u);
  bool found = false;
  for (const auto& pt : curve) {
    if (pt["b"].get<double>() != b) continue;
    found = true;
    const double v = pt["value"], left = pt["left_limit"];
    EXPECT_LE(std::abs(v), (v - left) + 1e-9);
  }
  EXPECT_TRUE(found);
  EXPECT_TRUE(j.contains("upper"));
  EXPECT_GT(j["upper"]["b"].get<double>(), 0.0);
  EXPECT_EQ(j["gamma0"], 1.8);
  EXPECT_TRUE(j["diagnostics"].is_object() || j["diagnostics"].is_array());
}

TEST(CliThreshold, MatchesLibraryOnRandomConfigs) {
  Rng rng(13);
  const char* r_mus[] = {"none", "n^-0.2", "0.1"};
  const char* r_es[] = {"none", "none", "0.5*n^-0.3"};
  for (int k = 0; k < 10; ++k) {
    const std::string path = write_file("data" + std::to_string(k) + ".csv", design_csv(150 + 50 * k, 200 + k));
    ThresholdOptions opt;
    opt.ingest = x_only();
    opt.r_mu = r_mus[k % 3];
    opt.r_e = r_es[(k / 3) % 3];
    opt.seed = 1 + rng.uniform_index(100);
    opt.upper = k % 2 == 0;
    const bool supplied = k % 4 == 1;
    if (supplied) {
      opt.propensity_col = "e_true";
      opt.ingest.extra_cols.push_back("e_true");
    }
    const auto lib = run_threshold(ingest_csv(path, opt.ingest), opt);
    std::string args = "threshold --data \"" + path + "\" --covariates x --r-mu " + opt.r_mu + " --r-e " + opt.r_e +
                       " --seed " + std::to_string(opt.seed);
    if (opt.upper) args += " --upper";
    if (supplied) args += " --propensity-col e_true";
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << args << "\n" << r.err;
    expect_fields_equal(json::parse(r.out), lib, args);
  }
}

// ---------------------------------------------------------------------------
// simulate

TEST(CliSimulate, FilesAndHandRecomputation) {
  const fs::path out = tmp_dir() / "sim";
  const std::string args = "simulate --estimators clipped-aipw --nuisance oracle --threshold 0 --reps 10 --n 300 "
                           "--seed 4 --out \"" + out.string() + "\"";
  const auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(out / "replications.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "rep,estimator,n,b,psi_hat,sigma_hat,t,p");
  int rows = 0, reject = 0;
  while (std::getline(in, line)) {
    ++rows;
    const double p = std::stod(line.substr(line.rfind(',') + 1));
    reject += p < 0.05;
  }
  EXPECT_EQ(rows, 10);
  const json summary = json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(summary["summary"]["clipped-aipw"]["rejection_rate"].get<double>(), reject / 10.0);
  EXPECT_EQ(summary["seed"], 4);

  // Same seed: identical files.
  const auto again = run_cli(args);
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(out / "replications.csv"), csv);
  EXPECT_EQ(again.out, r.out);
}

TEST(CliSimulate, RowCountIsRepsTimesEstimators) {
  const auto r = run_cli("simulate --estimators aipw,ipw,clipped-ipw --reps 7 --n 200 --out \"" +
                         (tmp_dir() / "sim").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(tmp_dir() / "sim" / "replications.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 7 * 3);
}

TEST(CliSimulate, MatchesLibraryOnRandomConfigs) {
  Rng rng(17);
  const char* estimators[] = {"clipped-aipw", "aipw,trimmed-aipw", "clipped-ipw,ipw"};
  const char* nuisances[] = {"oracle", "oracle", "estimated", "oracle-outcome", "oracle-propensity"};
  for (int k = 0; k < 10; ++k) {
    SimulateOptions opt;
    opt.gamma0 = 1.5 + rng.uniform();
    opt.kappa = 1.0 + rng.uniform_index(3);
    opt.n = 200 + rng.uniform_index(200);
    opt.reps = 3 + static_cast<int>(rng.uniform_index(4));
    opt.estimators = estimators[k % 3];
    opt.nuisance = nuisances[k % 5];
    opt.threshold = k % 2 ? "auto" : "0.05";
    opt.seed = rng.uniform_index(100000);
    opt.demean = k % 4 == 3 ? "verbatim_text" : "analytic_zero";
    opt.threads = 1;
    const json lib = run_simulate(opt);
    const std::string args = "simulate --gamma " + num(opt.gamma0) + " --kappa " + num(opt.kappa) + " --n " +
                             std::to_string(opt.n) + " --reps " + std::to_string(opt.reps) + " --estimators " +
                             opt.estimators + " --nuisance " + opt.nuisance + " --threshold " + opt.threshold +
                             " --seed " + std::to_string(opt.seed) + " --demean " + opt.demean + " --threads 1";
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << args << "\n" << r.err;
    expect_fields_equal(json::parse(r.out), lib, args);
  }
}

// ---------------------------------------------------------------------------
// rate-experiment

TEST(CliRate, TheoreticalExponentAndFiles) {
  const fs::path out = tmp_dir() / "rate";
  const auto r = run_cli("rate-experiment --ns 300,600,1200 --reps 3 --out \"" + out.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["theoretical_exponent"], -0.25);
  EXPECT_EQ(j["ns"].size(), 3u);
  EXPECT_TRUE(j["slope"].is_number());
  const std::string csv = slurp(out / "rate.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "n,median_sup_error");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(json::parse(slurp(out / "rate.json")), j);
}

TEST(CliRate, MatchesLibraryOnRandomConfigs) {
  Rng rng(23);
  for (int k = 0; k < 10; ++k) {
    RateExperimentOptions opt;
    opt.beta_mu = 0.5 + rng.uniform();
    opt.gamma0 = 1.5 + rng.uniform();
    const std::size_t n0 = 100 + rng.uniform_index(100);
    opt.ns = std::to_string(n0) + "," + std::to_string(2 * n0) + "," + std::to_string(4 * n0);
    opt.reps = 2;
    opt.seed = rng.uniform_index(1000);
    const json lib = run_rate_experiment(opt);
    const std::string args = "rate-experiment --beta-mu " + num(opt.beta_mu) + " --gamma0 " + num(opt.gamma0) +
                             " --ns " + opt.ns + " --reps 2 --seed " + std::to_string(opt.seed);
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << args << "\n" << r.err;
    expect_fields_equal(json::parse(r.out), lib, args);
  }
}

TEST(CliRate, SlopesStableAcrossSeeds) {
  const auto a = run_cli("rate-experiment --reps 20 --seed 1");
  const auto b = run_cli("rate-experiment --reps 20 --seed 2");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  const double sa = json::parse(a.out)["slope"], sb = json::parse(b.out)["slope"];
  EXPECT_LT(std::abs(sa - sb), 0.1) << sa << " vs " << sb;
}

// ---------------------------------------------------------------------------
// Exit codes and errors

TEST(CliErrors, InputValidationExitsTwo) {
  EXPECT_EQ(run_cli("estimate --data /nonexistent.csv").code, 2);
  EXPECT_EQ(run_cli("estimate --data x.csv --no-such-flag").code, 2);
  EXPECT_EQ(run_cli("").code, 2);
  const std::string bad = write_file("bad.csv", "d,y,x\n1,1,0.1\n2,1,0.2\n");
  const auto r = run_cli("estimate --data \"" + bad + "\"");
  EXPECT_EQ(r.code, 2);
  const json err = json::parse(r.err);
  EXPECT_EQ(err["row"], 2);
  EXPECT_EQ(err["column"], "d");
  EXPECT_EQ(run_cli("simulate --estimators nonsense --reps 2").code, 2);
  EXPECT_EQ(run_cli("estimate --data \"" + bad + "\" --threshold 3").code, 2);
}

TEST(CliErrors, HelpExitsZero) {
  const auto r = run_cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("estimate"), std::string::npos);
  const auto sub = run_cli("simulate --help");
  EXPECT_EQ(sub.code, 0);
  EXPECT_NE(sub.out.find("--estimators"), std::string::npos);
}

TEST(CliErrors, NumericalFailureExitsThree) {
  // Fewer rows than folds: every replication fails.
  const auto r = run_cli("simulate --n 3 --reps 4 --nuisance estimated");
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(CliErrors, DegenerateDataExitsFour) {
  std::string csv = "d,y,x\n1,1,0.0\n";
  for (int i = 1; i < 20; ++i) csv += "0,0," + std::to_string(i / 20.0) + "\n";
  const std::string path = write_file("one_treated.csv", csv);
  const auto r = run_cli("estimate --data \"" + path + "\" --target apo");
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_EQ(json::parse(r.err)["kind"], "degenerate_data");
}

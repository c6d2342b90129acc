#include <catch2/catch.hpp>

#include "qpt/experiments.hpp"

using namespace qpt;

namespace {

ExperimentSpec small_success_spec() {
  ExperimentSpec s;
  s.experiment = Experiment::SuccessRate;
  s.n = 2;
  s.rank = 1;
  s.m_grid = {8, 16};
  s.trials = 4;
  s.methods = {Method::CptFit, Method::TraceNormConstrained};
  s.seed = 99;
  s.threads = 2;
  return s;
}

}  // namespace

TEST_CASE("success_rate experiment produces a row per grid point and method") {
  const ExperimentResult res = run_success_rate(small_success_spec());
  REQUIRE(res.rows.size() == 4);
  for (const auto& row : res.rows) {
    REQUIRE(row.trials == 4);
    REQUIRE(row.success_rate >= 0.0);
    REQUIRE(row.success_rate <= 1.0);
    REQUIRE(std::isfinite(row.mean_error));
  }
  // m = 16 >= n^4 - n^2 = 12: full-dimension regime, everything recovers
  for (const auto& row : res.rows)
    if (row.m == 16) REQUIRE(row.success_rate == 1.0);
}

TEST_CASE("experiments are deterministic up to timing columns") {
  const ExperimentSpec s = small_success_spec();
  const std::string a = csv_without_timing(to_csv(run_success_rate(s)));
  const std::string b = csv_without_timing(to_csv(run_success_rate(s)));
  REQUIRE(a == b);
  REQUIRE(a.find("success_rate") != std::string::npos);

  ExperimentSpec other = s;
  other.seed = 100;
  const std::string c = csv_without_timing(to_csv(run_success_rate(other)));
  REQUIRE(a != c);
}

TEST_CASE("csv columns carry the independent variables") {
  const ExperimentResult res = run_success_rate(small_success_spec());
  const std::string csv = to_csv(res);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  REQUIRE(header == std::string(kCsvHeader));
  std::string row;
  std::getline(in, row);
  REQUIRE(row.find("success_rate,2,1,8,cpt-fit,generic") == 0);
}

TEST_CASE("rank_phase rejects empty grids") {
  ExperimentSpec s;
  s.experiment = Experiment::RankPhase;
  s.m_grid = {};
  s.rank_grid = {};
  REQUIRE_THROWS_AS(run_rank_phase(s), std::invalid_argument);
}

TEST_CASE("rank_phase runs a small grid") {
  ExperimentSpec s;
  s.experiment = Experiment::RankPhase;
  s.n = 2;
  s.m_grid = {6, 14};
  s.rank_grid = {1, 4};
  s.trials = 3;
  s.seed = 7;
  s.threads = 2;
  const ExperimentResult res = run_rank_phase(s);
  REQUIRE(res.rows.size() == 4);
  // the full-measurement column recovers everything, rank included
  for (const auto& row : res.rows)
    if (row.m == 14) REQUIRE(row.success_rate == 1.0);
}

TEST_CASE("rank_phase rates are monotone in m and ordered in rank") {
  ExperimentSpec s;
  s.experiment = Experiment::RankPhase;
  s.n = 2;
  s.m_grid = {5, 9, 14};
  s.rank_grid = {1, 4};
  s.trials = 8;
  s.seed = 17;
  s.threads = 2;
  const ExperimentResult res = run_rank_phase(s);
  auto rate = [&](Eigen::Index r, Eigen::Index m) {
    for (const auto& row : res.rows)
      if (row.r == r && row.m == m) return row.success_rate;
    return -1.0;
  };
  // statistical trend: allow one trial of slack per comparison
  const double slack = 1.0 / double(s.trials);
  for (Eigen::Index r : {1, 4}) {
    REQUIRE(rate(r, 9) >= rate(r, 5) - slack);
    REQUIRE(rate(r, 14) >= rate(r, 9) - slack);
  }
  // the low-rank column transitions earlier
  REQUIRE(rate(1, 9) >= rate(4, 9) - slack);
}

TEST_CASE("observable rank sweep: higher-rank observables help under noise") {
  ExperimentSpec s;
  s.experiment = Experiment::ObservableRank;
  s.n = 4;
  s.rank = 1;
  s.target = "random-unitary";
  s.m_grid = {80};
  s.rank_a_grid = {1, 4};
  s.noise = 0.1;
  s.trials = 20;
  s.seed = 23;
  s.threads = 2;
  const ExperimentResult res = run_observable_rank(s);
  REQUIRE(res.rows.size() == 2);
  REQUIRE(res.rows[0].rank_a == 1);
  // estimate column carries ||A0||_F, increasing with the rank
  REQUIRE(res.rows[1].estimate > res.rows[0].estimate);
  REQUIRE(res.rows[1].mean_error < res.rows[0].mean_error);
}

TEST_CASE("pauli_compare produces per-ensemble rows") {
  ExperimentSpec s;
  s.experiment = Experiment::PauliCompare;
  s.n = 2;
  s.target = "random-unitary";
  s.m_grid = {14};
  s.trials = 3;
  s.methods = {Method::CptFit};
  s.seed = 29;
  s.threads = 2;
  const ExperimentResult res = run_pauli_compare(s);
  REQUIRE(res.rows.size() == 2);
  REQUIRE(res.rows[0].ensemble == "generic");
  REQUIRE(res.rows[1].ensemble == "pauli");
  for (const auto& row : res.rows) REQUIRE(row.trials == 3);
}

TEST_CASE("mismatch sweep endpoint reduces to the noiseless case") {
  ExperimentSpec s;
  s.experiment = Experiment::MismatchSweep;
  s.n = 3;
  s.rank = 1;
  s.target = "random";
  s.m_grid = {45};  // 5 r n^2, below the full dimension 72
  s.mismatch_grid = {0.0, 0.3};
  s.trials = 1;
  s.methods = {Method::CptFit};
  s.seed = 21;
  const ExperimentResult res = run_mismatch_sweep(s);
  REQUIRE(res.rows.size() == 2);
  REQUIRE(res.rows[0].mean_error <= 1e-5);       // lambda = 0: exact recovery
  REQUIRE(res.rows[1].mean_error > 1e-3);        // mismatch shows up
}

TEST_CASE("noise sweep tracks the injected strength") {
  ExperimentSpec s;
  s.experiment = Experiment::NoiseSweep;
  s.n = 2;
  s.target = "random";
  s.rank = 1;
  s.m_grid = {14};
  s.noise_grid = {0.0, 0.2};
  s.trials = 2;
  s.methods = {Method::CptFit};
  s.seed = 31;
  s.threads = 2;
  const ExperimentResult res = run_noise_sweep(s);
  REQUIRE(res.rows.size() == 2);
  REQUIRE(res.rows[0].mean_error <= 1e-5);
  REQUIRE(res.rows[1].mean_error > 1e-4);
}

TEST_CASE("sample complexity rows are well-formed even at one shot") {
  ExperimentSpec s;
  s.experiment = Experiment::SampleComplexity;
  s.n = 2;
  s.rank = 1;
  s.m_grid = {12};
  s.shots_grid = {1, 100};
  s.trials = 2;
  s.seed = 13;
  s.threads = 2;
  const ExperimentResult res = run_sample_complexity(s);
  REQUIRE(res.rows.size() == 2);
  for (const auto& row : res.rows) {
    REQUIRE(std::isfinite(row.mean_noise_norm));
    REQUIRE(row.mean_noise_norm >= 0.0);
  }
  // more shots, less sampling noise
  REQUIRE(res.rows[1].mean_noise_norm < res.rows[0].mean_noise_norm);
}

TEST_CASE("verify_moments runs its checks and the mutation control") {
  ExperimentSpec s;
  s.experiment = Experiment::VerifyMoments;
  s.seed = 5;
  s.mc_samples = 20000;
  s.checks = {"s4", "tn_bound", "mutation_control"};
  const ExperimentResult res = run_verify_moments(s);
  REQUIRE(res.rows.size() >= 3);
  for (const auto& row : res.rows) REQUIRE(row.passed == 1);

  SECTION("unknown checks are rejected") {
    ExperimentSpec bad = s;
    bad.checks = {"nonsense"};
    REQUIRE_THROWS_AS(run_verify_moments(bad), std::invalid_argument);
  }
}

TEST_CASE("spec json round trip") {
  ExperimentSpec s = small_success_spec();
  s.noise_grid = {0.1, 0.2};
  s.format = "json";
  s.out = "somewhere.csv";
  const Json j = spec_to_json(s);
  const ExperimentSpec back = spec_from_json(j);
  REQUIRE(back.experiment == s.experiment);
  REQUIRE(back.n == s.n);
  REQUIRE(back.m_grid == s.m_grid);
  REQUIRE(back.methods.size() == 2);
  REQUIRE(back.noise_grid == s.noise_grid);
  REQUIRE(back.seed == s.seed);
  REQUIRE(back.format == "json");
  REQUIRE(back.out == s.out);
}

TEST_CASE("json output carries environment and rows") {
  const ExperimentResult res = run_success_rate(small_success_spec());
  const Json j = to_json(res);
  REQUIRE(j["environment"]["seed"] == 99);
  REQUIRE(j["rows"].size() == 4);
  REQUIRE(j["cpt_dimension"] == 12);
}

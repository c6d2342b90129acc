// Command-line harness for the channel-reconstruction experiments.
//
//   qpt <experiment> [--config file.json] [flag overrides...]
//
// Experiments: success_rate, rank_phase, noise_sweep, mismatch_sweep,
// observable_rank, pauli_compare, sample_complexity, verify_moments.
// Exit codes: 0 done, 2 bad specification, 3 solver failure rate above cap.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qpt/qpt.hpp"

namespace {

using namespace qpt;

ExperimentSpec defaults_for(Experiment e) {
  ExperimentSpec s;
  s.experiment = e;
  switch (e) {
    case Experiment::SuccessRate:
      s.n = 4;
      s.rank = 2;
      s.m_grid = {40, 80, 120, 160, 200, 240};
      s.trials = 20;
      s.methods = {Method::CptFit, Method::TraceNormConstrained,
                   Method::DiamondNormConstrained};
      break;
    case Experiment::RankPhase:
      s.n = 4;
      s.rank_grid = {1, 2, 4, 8, 16};
      s.m_grid = {40, 80, 120, 160, 200, 240, 260};
      s.trials = 10;
      break;
    case Experiment::NoiseSweep:
      s.n = 8;
      s.target = "toffoli";
      s.m_grid = {320};
      s.noise_grid = {0.01, 0.02, 0.03, 0.04, 0.05,
                      0.06, 0.07, 0.08, 0.09, 0.10};
      s.trials = 10;
      s.methods = {Method::CptFit, Method::TraceNormConstrained};
      break;
    case Experiment::MismatchSweep:
      s.n = 8;
      s.target = "toffoli";
      s.m_grid = {320};
      s.mismatch_grid = {0.0, 0.05, 0.1, 0.15, 0.2, 0.25,
                         0.3, 0.35, 0.4, 0.45, 0.5};
      s.trials = 1;
      s.methods = {Method::CptFit, Method::TraceNormConstrained};
      break;
    case Experiment::ObservableRank:
      s.n = 8;
      s.target = "toffoli";
      s.m_grid = {320};
      s.rank_a_grid = {1, 2, 3, 4, 5, 6, 7, 8};
      s.noise = 0.1;
      s.trials = 20;
      break;
    case Experiment::PauliCompare:
      s.n = 8;
      s.target = "toffoli";
      s.m_grid = {240, 320, 400};
      s.trials = 30;
      s.methods = {Method::CptFit, Method::TraceNorm,
                   Method::TraceNormConstrained};
      break;
    case Experiment::SampleComplexity:
      s.n = 4;
      s.rank = 2;
      s.m_grid = {160};
      s.shots_grid = {100, 1000, 10000};
      s.trials = 5;
      break;
    case Experiment::VerifyMoments:
      break;
  }
  return s;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const std::string& raw : names) {
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto m = method_from_string(item);
      if (!m) throw std::invalid_argument("unknown method: " + item);
      out.push_back(*m);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressed-sensing quantum process tomography harness"};

  std::string experiment_name;
  app.add_option("experiment", experiment_name,
                 "success_rate | rank_phase | noise_sweep | mismatch_sweep | "
                 "observable_rank | pauli_compare | sample_complexity | "
                 "verify_moments")
      ->required();

  std::string config_path;
  app.add_option("--config", config_path, "JSON spec file");

  long n = -1, rank = -1, m = -1, trials = -1, shots = -1;
  double noise = -1.0, mismatch = -1.0, eta = -2.0, threshold = -1.0;
  long rank_a = -1;
  std::uint64_t seed = 0;
  std::vector<std::string> method_names;
  std::string ensemble_name, out_path, format, target;
  std::vector<long> m_grid, rank_grid, rank_a_grid, shots_grid;
  std::vector<double> noise_grid, mismatch_grid;
  int depth = -1, threads = -1;
  long solver_max_iter = -1, cpt_max_iter = -1;
  double solver_eps = -1.0;

  app.add_option("--n", n, "Hilbert space dimension");
  app.add_option("--rank", rank, "target Kraus rank");
  app.add_option("--m", m, "number of measurement settings");
  app.add_option("--m-grid", m_grid, "grid of measurement counts")
      ->delimiter(',');
  app.add_option("--trials", trials, "trials per grid point");
  app.add_option("--method", method_names,
                 "cpt-fit | tn | tn-c | dn | dn-c (repeat or comma list)");
  app.add_option("--ensemble", ensemble_name, "generic | pauli | circuit");
  app.add_option("--noise", noise, "noise strength ||e||_2");
  app.add_option("--noise-grid", noise_grid, "grid of noise strengths")
      ->delimiter(',');
  app.add_option("--mismatch", mismatch, "mismatch weight lambda");
  app.add_option("--mismatch-grid", mismatch_grid, "grid of lambdas")
      ->delimiter(',');
  app.add_option("--rank-a", rank_a, "observable rank");
  app.add_option("--rank-a-grid", rank_a_grid, "grid of observable ranks")
      ->delimiter(',');
  app.add_option("--rank-grid", rank_grid, "grid of Kraus ranks")
      ->delimiter(',');
  app.add_option("--shots", shots, "samples per expectation value");
  app.add_option("--shots-grid", shots_grid, "grid of shot counts")
      ->delimiter(',');
  app.add_option("--eta", eta, "data-fidelity radius (default: automatic)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  app.add_option("--threshold", threshold, "success threshold");
  app.add_option("--out", out_path, "output file (default: stdout)");
  app.add_option("--format", format, "csv | json");
  app.add_option("--target", target,
                 "random | random-unitary | toffoli | identity");
  app.add_option("--depth", depth, "circuit ensemble depth");
  app.add_option("--threads", threads, "worker threads (0: hardware)");
  app.add_option("--solver-max-iter", solver_max_iter, "ADMM iteration cap");
  app.add_option("--solver-eps", solver_eps, "ADMM residual tolerance");
  app.add_option("--cpt-max-iter", cpt_max_iter, "CPT-fit iteration cap");

  try {
    app.parse(argc, argv);

    const auto exp = qpt::experiment_from_string(experiment_name);
    if (!exp)
      throw std::invalid_argument("unknown experiment: " + experiment_name);

    ExperimentSpec spec = defaults_for(*exp);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::invalid_argument("cannot open config: " + config_path);
      Json j;
      in >> j;
      ExperimentSpec from_file = spec_from_json(j);
      from_file.experiment = *exp;
      spec = from_file;
      if (spec.m_grid.empty()) spec.m_grid = defaults_for(*exp).m_grid;
      if (spec.methods.empty()) spec.methods = defaults_for(*exp).methods;
    }

    if (n > 0) spec.n = n;
    if (rank > 0) spec.rank = rank;
    if (m > 0) spec.m_grid = {m};
    if (!m_grid.empty()) spec.m_grid.assign(m_grid.begin(), m_grid.end());
    if (trials > 0) spec.trials = trials;
    if (!method_names.empty()) spec.methods = parse_methods(method_names);
    if (!ensemble_name.empty()) {
      if (ensemble_name == "generic") spec.ensemble = EnsembleKind::Generic;
      else if (ensemble_name == "pauli") spec.ensemble = EnsembleKind::Pauli;
      else if (ensemble_name == "circuit") spec.ensemble = EnsembleKind::Circuit;
      else throw std::invalid_argument("unknown ensemble: " + ensemble_name);
    }
    if (noise >= 0.0) {
      spec.noise = noise;
      if (*exp == Experiment::NoiseSweep) spec.noise_grid = {noise};
    }
    if (!noise_grid.empty()) spec.noise_grid = noise_grid;
    if (mismatch >= 0.0 && *exp == Experiment::MismatchSweep)
      spec.mismatch_grid = {mismatch};
    if (!mismatch_grid.empty()) spec.mismatch_grid = mismatch_grid;
    if (rank_a > 0) spec.rank_a_grid = {rank_a};
    if (!rank_a_grid.empty())
      spec.rank_a_grid.assign(rank_a_grid.begin(), rank_a_grid.end());
    if (!rank_grid.empty())
      spec.rank_grid.assign(rank_grid.begin(), rank_grid.end());
    if (shots > 0) {
      spec.shots = shots;
      if (*exp == Experiment::SampleComplexity) spec.shots_grid = {shots};
    }
    if (eta >= 0.0) spec.eta = eta;
    if (!shots_grid.empty()) spec.shots_grid = shots_grid;
    if (seed_opt->count() > 0) spec.seed = seed;
    if (threshold > 0.0) spec.threshold = threshold;
    if (!out_path.empty()) spec.out = out_path;
    if (!format.empty()) spec.format = format;
    if (!target.empty()) spec.target = target;
    if (depth > 0) spec.circuit_depth = depth;
    if (threads >= 0) spec.threads = threads;
    if (solver_max_iter > 0) spec.solver.max_iter = solver_max_iter;
    if (solver_eps > 0.0) {
      spec.solver.eps_primal = solver_eps;
      spec.solver.eps_dual = solver_eps;
    }
    if (cpt_max_iter > 0) spec.cpt.max_iter = cpt_max_iter;

    spec.validate();
    const ExperimentResult result = run_experiment(spec);

    std::string payload;
    if (spec.format == "json")
      payload = to_json(result).dump(2) + "\n";
    else
      payload = to_csv(result);
    if (spec.out.empty()) {
      std::cout << payload;
    } else {
      std::ofstream out(spec.out);
      if (!out) throw std::invalid_argument("cannot open output: " + spec.out);
      out << payload;
    }

    std::cerr << to_string(spec.experiment) << ": " << result.rows.size()
              << " rows, " << result.solver_failures << "/"
              << result.total_solves << " solver failures\n";
    if (result.failure_cap_exceeded()) {
      std::cerr << "solver failure rate above cap " << spec.failure_cap
                << "\n";
      return 3;
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "specification error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

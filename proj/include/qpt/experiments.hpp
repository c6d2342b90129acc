#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qpt/channels.hpp"
#include "qpt/io.hpp"
#include "qpt/measurements.hpp"
#include "qpt/reconstruct.hpp"
#include "qpt/verify.hpp"

namespace qpt {

inline constexpr const char* kVersion = "qpt 0.1.0";
inline constexpr double kTenEps = 10.0 * 2.220446049250313e-16;

enum class Experiment {
  SuccessRate,
  RankPhase,
  NoiseSweep,
  MismatchSweep,
  ObservableRank,
  PauliCompare,
  SampleComplexity,
  VerifyMoments,
};

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::SuccessRate: return "success_rate";
    case Experiment::RankPhase: return "rank_phase";
    case Experiment::NoiseSweep: return "noise_sweep";
    case Experiment::MismatchSweep: return "mismatch_sweep";
    case Experiment::ObservableRank: return "observable_rank";
    case Experiment::PauliCompare: return "pauli_compare";
    case Experiment::SampleComplexity: return "sample_complexity";
    case Experiment::VerifyMoments: return "verify_moments";
  }
  return "?";
}

inline std::optional<Experiment> experiment_from_string(const std::string& s) {
  if (s == "success_rate") return Experiment::SuccessRate;
  if (s == "rank_phase") return Experiment::RankPhase;
  if (s == "noise_sweep") return Experiment::NoiseSweep;
  if (s == "mismatch_sweep") return Experiment::MismatchSweep;
  if (s == "observable_rank") return Experiment::ObservableRank;
  if (s == "pauli_compare") return Experiment::PauliCompare;
  if (s == "sample_complexity") return Experiment::SampleComplexity;
  if (s == "verify_moments") return Experiment::VerifyMoments;
  return std::nullopt;
}

struct ExperimentSpec {
  Experiment experiment = Experiment::SuccessRate;
  Eigen::Index n = 4;
  Eigen::Index rank = 2;
  std::vector<Eigen::Index> m_grid = {};
  std::vector<Eigen::Index> rank_grid = {};   // rank_phase rows
  long trials = 10;
  std::vector<Method> methods = {Method::CptFit};
  std::vector<double> noise_grid = {};
  std::vector<double> mismatch_grid = {};
  std::vector<Eigen::Index> rank_a_grid = {};
  std::vector<long> shots_grid = {};
  std::vector<std::string> checks = {};       // verify_moments selection
  EnsembleKind ensemble = EnsembleKind::Generic;
  int circuit_depth = 8;
  std::string target = "random";              // random | toffoli | identity
  double noise = 0.0;                         // fixed noise strength
  double eta = -1.0;                          // < 0: noise strength + 10 eps
  long shots = 0;
  std::uint64_t seed = 1;
  double threshold = 1e-5;                    // success threshold
  long mc_samples = 100000;
  bool uniform_protocol = false;              // fixed ensemble, prefix reuse
  double failure_cap = 0.25;
  int threads = 0;                            // 0: hardware concurrency
  std::string out;                            // empty: stdout
  std::string format = "csv";
  SolverConfig solver;
  CptFitConfig cpt;

  void validate() const {
    if (trials < 1) throw std::invalid_argument("spec: trials must be >= 1");
    if (threshold <= 0.0)
      throw std::invalid_argument("spec: threshold must be > 0");
    if (format != "csv" && format != "json")
      throw std::invalid_argument("spec: format must be csv or json");
  }
};

struct ExperimentRow {
  Eigen::Index m = -1;
  std::string method;
  Eigen::Index r = -1;
  std::string ensemble;
  double noise = std::numeric_limits<double>::quiet_NaN();
  double mismatch = std::numeric_limits<double>::quiet_NaN();
  Eigen::Index rank_a = -1;
  long shots = -1;
  std::string check;
  long trials = 0;
  long successes = 0;
  double success_rate = std::numeric_limits<double>::quiet_NaN();
  double mean_error = std::numeric_limits<double>::quiet_NaN();
  double median_error = std::numeric_limits<double>::quiet_NaN();
  double max_error = std::numeric_limits<double>::quiet_NaN();
  double mean_error_tnorm = std::numeric_limits<double>::quiet_NaN();
  double mean_residual = std::numeric_limits<double>::quiet_NaN();
  double mean_objective = std::numeric_limits<double>::quiet_NaN();
  double mean_noise_norm = std::numeric_limits<double>::quiet_NaN();
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double reference = std::numeric_limits<double>::quiet_NaN();
  double tolerance = std::numeric_limits<double>::quiet_NaN();
  int passed = -1;
  std::uint64_t seed_stream = 0;
  double mean_wall_ms = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<ExperimentRow> rows;
  long solver_failures = 0;
  long total_solves = 0;
  std::string version = kVersion;

  bool failure_cap_exceeded() const {
    return total_solves > 0 &&
           double(solver_failures) / double(total_solves) > spec.failure_cap;
  }
};

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string fmt_index(Eigen::Index v) {
  return v < 0 ? "" : std::to_string(static_cast<long long>(v));
}

inline std::string fmt_long(long v) {
  return v < 0 ? "" : std::to_string(v);
}

}  // namespace detail

inline constexpr const char* kCsvHeader =
    "experiment,n,r,m,method,ensemble,noise,mismatch,rank_a,shots,check,"
    "trials,successes,success_rate,mean_error,median_error,max_error,"
    "mean_error_tnorm,mean_residual,mean_objective,mean_noise_norm,estimate,"
    "reference,tolerance,passed,seed_stream,mean_wall_ms";

inline void write_csv(const ExperimentResult& res, std::ostream& out) {
  using detail::fmt_double;
  using detail::fmt_index;
  using detail::fmt_long;
  out << kCsvHeader << "\n";
  for (const ExperimentRow& row : res.rows) {
    out << to_string(res.spec.experiment) << ',' << res.spec.n << ','
        << fmt_index(row.r) << ',' << fmt_index(row.m) << ',' << row.method
        << ',' << row.ensemble << ',' << fmt_double(row.noise) << ','
        << fmt_double(row.mismatch) << ',' << fmt_index(row.rank_a) << ','
        << fmt_long(row.shots) << ',' << row.check << ',' << row.trials << ','
        << row.successes << ',' << fmt_double(row.success_rate) << ','
        << fmt_double(row.mean_error) << ',' << fmt_double(row.median_error)
        << ',' << fmt_double(row.max_error) << ','
        << fmt_double(row.mean_error_tnorm) << ','
        << fmt_double(row.mean_residual) << ','
        << fmt_double(row.mean_objective) << ','
        << fmt_double(row.mean_noise_norm) << ',' << fmt_double(row.estimate)
        << ',' << fmt_double(row.reference) << ','
        << fmt_double(row.tolerance) << ','
        << (row.passed < 0 ? "" : std::to_string(row.passed)) << ','
        << row.seed_stream << ',' << fmt_double(row.mean_wall_ms) << "\n";
  }
}

inline std::string to_csv(const ExperimentResult& res) {
  std::ostringstream ss;
  write_csv(res, ss);
  return ss.str();
}

/// The same CSV with timing columns removed; used for determinism checks.
inline std::string csv_without_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  std::vector<std::size_t> keep;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (first) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i].find("wall_ms") == std::string::npos) keep.push_back(i);
      first = false;
    }
    bool lead = true;
    for (std::size_t i : keep) {
      if (!lead) out << ',';
      if (i < cells.size()) out << cells[i];
      lead = false;
    }
    out << "\n";
  }
  return out.str();
}

inline Json to_json(const ExperimentResult& res) {
  Json rows = Json::array();
  for (const ExperimentRow& r : res.rows) {
    Json j;
    j["m"] = r.m;
    j["method"] = r.method;
    j["r"] = r.r;
    j["ensemble"] = r.ensemble;
    if (!std::isnan(r.noise)) j["noise"] = r.noise;
    if (!std::isnan(r.mismatch)) j["mismatch"] = r.mismatch;
    if (r.rank_a >= 0) j["rank_a"] = r.rank_a;
    if (r.shots >= 0) j["shots"] = r.shots;
    if (!r.check.empty()) j["check"] = r.check;
    j["trials"] = r.trials;
    j["successes"] = r.successes;
    if (!std::isnan(r.success_rate)) j["success_rate"] = r.success_rate;
    if (!std::isnan(r.mean_error)) j["mean_error"] = r.mean_error;
    if (!std::isnan(r.median_error)) j["median_error"] = r.median_error;
    if (!std::isnan(r.max_error)) j["max_error"] = r.max_error;
    if (!std::isnan(r.mean_error_tnorm))
      j["mean_error_tnorm"] = r.mean_error_tnorm;
    if (!std::isnan(r.mean_residual)) j["mean_residual"] = r.mean_residual;
    if (!std::isnan(r.mean_objective)) j["mean_objective"] = r.mean_objective;
    if (!std::isnan(r.mean_noise_norm))
      j["mean_noise_norm"] = r.mean_noise_norm;
    if (!std::isnan(r.estimate)) j["estimate"] = r.estimate;
    if (!std::isnan(r.reference)) j["reference"] = r.reference;
    if (!std::isnan(r.tolerance)) j["tolerance"] = r.tolerance;
    if (r.passed >= 0) j["passed"] = r.passed != 0;
    j["seed_stream"] = r.seed_stream;
    if (!std::isnan(r.mean_wall_ms)) j["wall_ms"] = r.mean_wall_ms;
    rows.push_back(std::move(j));
  }
  Json j;
  j["experiment"] = to_string(res.spec.experiment);
  j["environment"] = {{"version", res.version}, {"seed", res.spec.seed}};
  j["n"] = res.spec.n;
  j["cpt_dimension"] = cpt_dimension(res.spec.n);
  j["rows"] = std::move(rows);
  return j;
}

// ---------------------------------------------------------------------------
// Parallel trial execution: deterministic by construction, results land in
// index-addressed slots regardless of scheduling.

namespace detail {

inline void parallel_for(long count, int threads,
                         const std::function<void(long)>& fn) {
  if (threads <= 0)
    threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = static_cast<int>(std::max<long>(1, std::min<long>(threads, count)));
  if (threads == 1) {
    for (long i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::thread> pool;
  std::mutex err_mutex;
  std::exception_ptr first_error;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      while (true) {
        const long i = next.fetch_add(1);
        if (i >= count) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct TrialOutcome {
  double error = std::numeric_limits<double>::quiet_NaN();
  double error_tnorm = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
  double objective = std::numeric_limits<double>::quiet_NaN();
  double noise_norm = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  bool solver_failed = false;
};

inline void aggregate(ExperimentRow& row, std::vector<TrialOutcome> trials,
                      double threshold) {
  row.trials = static_cast<long>(trials.size());
  std::vector<double> errs;
  double err_acc = 0, tn_acc = 0, res_acc = 0, obj_acc = 0, noise_acc = 0,
         wall_acc = 0;
  long noise_count = 0;
  for (const TrialOutcome& t : trials) {
    if (!std::isnan(t.error)) {
      errs.push_back(t.error);
      err_acc += t.error;
    }
    if (!std::isnan(t.error_tnorm)) tn_acc += t.error_tnorm;
    if (!std::isnan(t.residual)) res_acc += t.residual;
    if (!std::isnan(t.objective)) obj_acc += t.objective;
    if (!std::isnan(t.noise_norm)) {
      noise_acc += t.noise_norm;
      ++noise_count;
    }
    wall_acc += t.wall_ms;
    if (!t.solver_failed && !std::isnan(t.error) && t.error <= threshold)
      ++row.successes;
  }
  if (!errs.empty()) {
    row.mean_error = err_acc / double(errs.size());
    row.mean_error_tnorm = tn_acc / double(errs.size());
    row.mean_residual = res_acc / double(errs.size());
    row.mean_objective = obj_acc / double(errs.size());
    std::sort(errs.begin(), errs.end());
    row.median_error = errs[errs.size() / 2];
    row.max_error = errs.back();
  }
  if (noise_count > 0) row.mean_noise_norm = noise_acc / double(noise_count);
  row.success_rate = double(row.successes) / double(row.trials);
  row.mean_wall_ms = wall_acc / double(std::max<std::size_t>(trials.size(), 1));
}

inline QuantumChannel make_target(const ExperimentSpec& spec, Rng& rng) {
  if (spec.target == "toffoli") return toffoli_channel();
  if (spec.target == "identity") return identity_channel(spec.n);
  if (spec.target == "random-unitary")
    return unitary_channel(haar_unitary(spec.n, rng));
  return random_rank_r_channel(spec.n, spec.rank, rng);
}

inline MeasurementEnsemble make_ensemble(const ExperimentSpec& spec,
                                         Eigen::Index m, Eigen::Index rank_a,
                                         Rng& rng, std::uint64_t tag) {
  switch (spec.ensemble) {
    case EnsembleKind::Pauli: {
      int qubits = 0;
      while ((Eigen::Index(1) << qubits) < spec.n) ++qubits;
      if ((Eigen::Index(1) << qubits) != spec.n)
        throw std::invalid_argument("pauli ensemble requires n = 2^L");
      return gen_pauli_ensemble(qubits, m, rng, tag);
    }
    case EnsembleKind::Circuit:
      return gen_circuit_ensemble(spec.n, m, spec.circuit_depth,
                                  default_A0(spec.n, rank_a), rng, tag);
    case EnsembleKind::Generic:
    default:
      return gen_generic_ensemble(spec.n, m, default_A0(spec.n, rank_a), rng,
                                  tag);
  }
}

inline TrialOutcome run_reconstruction(const ExperimentSpec& spec,
                                       const MeasurementEnsemble& ensemble,
                                       const MeasurementVector& y, double eta,
                                       Method method,
                                       const ComplexMatrix& truth) {
  TrialOutcome out;
  try {
    ReconstructOptions opt;
    opt.solver = spec.solver;
    opt.cpt = spec.cpt;
    if (eta > 1e-6) {
      // noise dominates the attainable accuracy; no point grinding the fit
      // orders of magnitude below it
      opt.cpt.tol = std::max(opt.cpt.tol, 1e-6);
      opt.cpt.dykstra_tol = std::max(opt.cpt.dykstra_tol, 1e-8);
      opt.cpt.dykstra_max_iter = std::min(opt.cpt.dykstra_max_iter, 150L);
      opt.solver.eps_primal = std::max(opt.solver.eps_primal, 1e-7);
      opt.solver.eps_dual = std::max(opt.solver.eps_dual, 1e-7);
    }
    const ReconstructionResult rec =
        reconstruct(ensemble, y, method, eta, opt);
    out.error = reconstruction_error(rec.choi, truth, 2.0);
    out.error_tnorm = reconstruction_error(rec.choi, truth, 1.0);
    out.residual = rec.residual;
    out.objective = rec.objective;
    out.wall_ms = rec.wall_ms;
    out.solver_failed = rec.status == SolveStatus::Infeasible;
  } catch (const Error& err) {
    std::cerr << "solver failure (" << to_string(method) << "): " << err.what()
              << "\n";
    out.solver_failed = true;
  }
  return out;
}

inline std::uint64_t experiment_tag(Experiment e) {
  return 0x51c0ffee00000000ULL + static_cast<std::uint64_t>(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiments

/// Fresh target channel and ensemble per trial; success = Frobenius error of
/// the Choi matrix below the threshold.
inline ExperimentResult run_success_rate(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.methods.empty())
    throw std::invalid_argument("success_rate: methods must be nonempty");
  if (spec.m_grid.empty())
    throw std::invalid_argument("success_rate: m grid must be nonempty");
  ExperimentResult res;
  res.spec = spec;
  const std::uint64_t tag = detail::experiment_tag(spec.experiment);
  const long grid = static_cast<long>(spec.m_grid.size());
  const long per_point = spec.trials * static_cast<long>(spec.methods.size());
  std::vector<detail::TrialOutcome> outcomes(grid * per_point);

  detail::parallel_for(grid * spec.trials, spec.threads, [&](long task) {
    const long gi = task / spec.trials;
    const long trial = task % spec.trials;
    const Eigen::Index m = spec.m_grid[gi];
    Rng rng = Rng::substream(spec.seed, {tag, std::uint64_t(gi),
                                         std::uint64_t(trial)});
    const QuantumChannel target = detail::make_target(spec, rng);
    const MeasurementEnsemble ensemble =
        detail::make_ensemble(spec, m, spec.n, rng, spec.seed);
    MeasurementVector y = measure(target, ensemble);
    double eta = kTenEps;
    if (spec.noise > 0.0) {
      y = add_noise(y, spec.noise, rng);
      eta = spec.noise + kTenEps;
    }
    if (spec.eta >= 0.0) eta = spec.eta;
    for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
      outcomes[gi * per_point + mi * spec.trials + trial] =
          detail::run_reconstruction(spec, ensemble, y, eta, spec.methods[mi],
                                     target.choi.matrix());
    }
  });

  for (long gi = 0; gi < grid; ++gi)
    for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
      ExperimentRow row;
      row.m = spec.m_grid[gi];
      row.r = spec.rank;
      row.method = to_string(spec.methods[mi]);
      row.ensemble = to_string(spec.ensemble);
      row.seed_stream = Rng::derive_seed(spec.seed, {tag, std::uint64_t(gi)});
      std::vector<detail::TrialOutcome> slice(
          outcomes.begin() + gi * per_point + mi * spec.trials,
          outcomes.begin() + gi * per_point + (mi + 1) * spec.trials);
      for (const auto& o : slice) res.solver_failures += o.solver_failed;
      res.total_solves += static_cast<long>(slice.size());
      detail::aggregate(row, std::move(slice), spec.threshold);
      res.rows.push_back(std::move(row));
    }
  return res;
}

/// 2D phase diagram over (Kraus rank, m) for the CPT-fit.
inline ExperimentResult run_rank_phase(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.m_grid.empty() || spec.rank_grid.empty())
    throw std::invalid_argument("rank_phase: m and rank grids must be nonempty");
  ExperimentResult res;
  res.spec = spec;
  const std::uint64_t tag = detail::experiment_tag(spec.experiment);
  const long rows_n = static_cast<long>(spec.rank_grid.size());
  const long cols_n = static_cast<long>(spec.m_grid.size());
  std::vector<detail::TrialOutcome> outcomes(rows_n * cols_n * spec.trials);

  detail::parallel_for(
      rows_n * cols_n * spec.trials, spec.threads, [&](long task) {
        const long cell = task / spec.trials;
        const long trial = task % spec.trials;
        const Eigen::Index r = spec.rank_grid[cell / cols_n];
        const Eigen::Index m = spec.m_grid[cell % cols_n];
        Rng rng = Rng::substream(spec.seed, {tag, std::uint64_t(cell),
                                             std::uint64_t(trial)});
        const QuantumChannel target = random_rank_r_channel(spec.n, r, rng);
        const MeasurementEnsemble ensemble =
            detail::make_ensemble(spec, m, spec.n, rng, spec.seed);
        const MeasurementVector y = measure(target, ensemble);
        outcomes[task] = detail::run_reconstruction(
            spec, ensemble, y, kTenEps, Method::CptFit, target.choi.matrix());
      });

  for (long cell = 0; cell < rows_n * cols_n; ++cell) {
    ExperimentRow row;
    row.r = spec.rank_grid[cell / cols_n];
    row.m = spec.m_grid[cell % cols_n];
    row.method = to_string(Method::CptFit);
    row.ensemble = to_string(spec.ensemble);
    row.seed_stream = Rng::derive_seed(spec.seed, {tag, std::uint64_t(cell)});
    std::vector<detail::TrialOutcome> slice(
        outcomes.begin() + cell * spec.trials,
        outcomes.begin() + (cell + 1) * spec.trials);
    for (const auto& o : slice) res.solver_failures += o.solver_failed;
    res.total_solves += static_cast<long>(slice.size());
    detail::aggregate(row, std::move(slice), spec.threshold);
    res.rows.push_back(std::move(row));
  }
  return res;
}

namespace detail {

/// Shared scaffolding of the uniform-recovery sweeps: one ensemble drawn
/// once, a grid of (value, trial) cells, per-cell target/data supplied by the
/// caller.
struct SweepCell {
  QuantumChannel target;
  MeasurementVector y;
  double eta = 0.0;
  double noise_norm = std::numeric_limits<double>::quiet_NaN();
};

inline ExperimentResult run_sweep(
    const ExperimentSpec& spec, const std::vector<double>& grid,
    bool grid_is_noise,
    const std::function<SweepCell(double, Rng&, const MeasurementEnsemble&,
                                  const QuantumChannel&)>& make_cell) {
  spec.validate();
  if (grid.empty()) throw std::invalid_argument("sweep grid must be nonempty");
  if (spec.methods.empty())
    throw std::invalid_argument("sweep: methods must be nonempty");
  ExperimentResult res;
  res.spec = spec;
  const std::uint64_t tag = detail::experiment_tag(spec.experiment);
  const Eigen::Index m = spec.m_grid.empty() ? 320 : spec.m_grid.front();

  // uniform recovery: ensemble and base target are drawn once per sweep
  Rng ens_rng = Rng::substream(spec.seed, {tag, 0xE25E0B1EULL});
  const MeasurementEnsemble ensemble =
      detail::make_ensemble(spec, m, spec.n, ens_rng, spec.seed);
  Rng target_rng = Rng::substream(spec.seed, {tag, 0x7A26E7ULL});
  const QuantumChannel base_target = detail::make_target(spec, target_rng);

  const long grid_n = static_cast<long>(grid.size());
  const long per_point = spec.trials * static_cast<long>(spec.methods.size());
  std::vector<detail::TrialOutcome> outcomes(grid_n * per_point);

  detail::parallel_for(grid_n * spec.trials, spec.threads, [&](long task) {
    const long gi = task / spec.trials;
    const long trial = task % spec.trials;
    Rng rng = Rng::substream(spec.seed, {tag, std::uint64_t(gi),
                                         std::uint64_t(trial)});
    const SweepCell cell = make_cell(grid[gi], rng, ensemble, base_target);
    for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
      detail::TrialOutcome o = detail::run_reconstruction(
          spec, ensemble, cell.y, cell.eta, spec.methods[mi],
          cell.target.choi.matrix());
      o.noise_norm = cell.noise_norm;
      outcomes[gi * per_point + mi * spec.trials + trial] = o;
    }
  });

  for (long gi = 0; gi < grid_n; ++gi)
    for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
      ExperimentRow row;
      row.m = m;
      row.method = to_string(spec.methods[mi]);
      row.ensemble = to_string(spec.ensemble);
      if (grid_is_noise)
        row.noise = grid[gi];
      else
        row.mismatch = grid[gi];
      row.seed_stream = Rng::derive_seed(spec.seed, {tag, std::uint64_t(gi)});
      std::vector<detail::TrialOutcome> slice(
          outcomes.begin() + gi * per_point + mi * spec.trials,
          outcomes.begin() + gi * per_point + (mi + 1) * spec.trials);
      for (const auto& o : slice) res.solver_failures += o.solver_failed;
      res.total_solves += static_cast<long>(slice.size());
      detail::aggregate(row, std::move(slice), spec.threshold);
      res.rows.push_back(std::move(row));
    }
  return res;
}

}  // namespace detail

/// Noise stability at fixed settings (uniform recovery): eta tracks the
/// injected noise strength plus ten times machine precision.
inline ExperimentResult run_noise_sweep(const ExperimentSpec& spec) {
  if (spec.noise_grid.empty())
    throw std::invalid_argument("noise_sweep: noise grid must be nonempty");
  ExperimentSpec s = spec;
  s.uniform_protocol = true;
  return detail::run_sweep(
      s, s.noise_grid, /*grid_is_noise=*/true,
      [&s](double strength, Rng& rng, const MeasurementEnsemble& ensemble,
           const QuantumChannel& base) {
        detail::SweepCell cell;
        cell.target = base;
        cell.y = measure(cell.target, ensemble);
        if (strength > 0.0) cell.y = add_noise(cell.y, strength, rng);
        cell.noise_norm = strength;
        cell.eta = s.eta >= 0.0 ? s.eta : strength + kTenEps;
        return cell;
      });
}

/// Robustness to model mismatch: target (1-lambda) Toffoli + lambda
/// depolarizing, no measurement noise.
inline ExperimentResult run_mismatch_sweep(const ExperimentSpec& spec) {
  if (spec.mismatch_grid.empty())
    throw std::invalid_argument("mismatch_sweep: mismatch grid must be nonempty");
  ExperimentSpec s = spec;
  s.uniform_protocol = true;
  return detail::run_sweep(
      s, s.mismatch_grid, /*grid_is_noise=*/false,
      [&s](double lambda, Rng& rng, const MeasurementEnsemble& ensemble,
           const QuantumChannel& base) {
        (void)rng;
        detail::SweepCell cell;
        cell.target = mix(base, depolarizing_channel(s.n), lambda);
        cell.y = measure(cell.target, ensemble);
        cell.eta = s.eta >= 0.0 ? s.eta : kTenEps;
        return cell;
      });
}

/// Mean CPT-fit error against the rank (hence Frobenius norm) of the base
/// observable, at fixed noise strength.
inline ExperimentResult run_observable_rank(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.rank_a_grid.empty())
    throw std::invalid_argument("observable_rank: rank_a grid must be nonempty");
  ExperimentSpec s = spec;
  if (s.noise <= 0.0) s.noise = 0.1;
  ExperimentResult res;
  res.spec = s;
  const std::uint64_t tag = detail::experiment_tag(s.experiment);
  const Eigen::Index m = s.m_grid.empty() ? 320 : s.m_grid.front();
  const long grid_n = static_cast<long>(s.rank_a_grid.size());
  std::vector<detail::TrialOutcome> outcomes(grid_n * s.trials);
  Rng target_rng = Rng::substream(s.seed, {tag, 0x7A26E7ULL});
  const QuantumChannel fixed_target = detail::make_target(s, target_rng);

  detail::parallel_for(grid_n * s.trials, s.threads, [&](long task) {
    const long gi = task / s.trials;
    const long trial = task % s.trials;
    Rng rng =
        Rng::substream(s.seed, {tag, std::uint64_t(gi), std::uint64_t(trial)});
    const QuantumChannel& target = fixed_target;
    const MeasurementEnsemble ensemble =
        detail::make_ensemble(s, m, s.rank_a_grid[gi], rng, s.seed);
    MeasurementVector y = measure(target, ensemble);
    y = add_noise(y, s.noise, rng);
    const double eta = s.eta >= 0.0 ? s.eta : s.noise + kTenEps;
    detail::TrialOutcome o = detail::run_reconstruction(
        s, ensemble, y, eta, Method::CptFit, target.choi.matrix());
    o.noise_norm = s.noise;
    outcomes[task] = o;
  });

  for (long gi = 0; gi < grid_n; ++gi) {
    ExperimentRow row;
    row.m = m;
    row.rank_a = s.rank_a_grid[gi];
    row.noise = s.noise;
    row.method = to_string(Method::CptFit);
    row.ensemble = to_string(s.ensemble);
    row.estimate = default_A0(s.n, s.rank_a_grid[gi]).matrix().norm();
    row.seed_stream = Rng::derive_seed(s.seed, {tag, std::uint64_t(gi)});
    std::vector<detail::TrialOutcome> slice(
        outcomes.begin() + gi * s.trials,
        outcomes.begin() + (gi + 1) * s.trials);
    for (const auto& o : slice) res.solver_failures += o.solver_failed;
    res.total_solves += static_cast<long>(slice.size());
    detail::aggregate(row, std::move(slice), s.threshold);
    res.rows.push_back(std::move(row));
  }
  return res;
}

/// Generic versus Pauli ensembles on the same targets.
inline ExperimentResult run_pauli_compare(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.m_grid.empty())
    throw std::invalid_argument("pauli_compare: m grid must be nonempty");
  if (spec.methods.empty())
    throw std::invalid_argument("pauli_compare: methods must be nonempty");
  ExperimentResult res;
  res.spec = spec;
  const std::uint64_t tag = detail::experiment_tag(spec.experiment);
  const std::array<EnsembleKind, 2> kinds = {EnsembleKind::Generic,
                                             EnsembleKind::Pauli};
  const long grid = static_cast<long>(spec.m_grid.size());
  const long per_cell = spec.trials * static_cast<long>(spec.methods.size());
  std::vector<detail::TrialOutcome> outcomes(2 * grid * per_cell);

  detail::parallel_for(
      2 * grid * spec.trials, spec.threads, [&](long task) {
        const long cell = task / spec.trials;
        const long trial = task % spec.trials;
        const long ki = cell / grid;
        const long gi = cell % grid;
        const Eigen::Index m = spec.m_grid[gi];
        ExperimentSpec local = spec;
        local.ensemble = kinds[ki];
        Rng rng = Rng::substream(spec.seed, {tag, std::uint64_t(cell),
                                             std::uint64_t(trial)});
        const QuantumChannel target = detail::make_target(local, rng);
        const MeasurementEnsemble ensemble =
            detail::make_ensemble(local, m, spec.n, rng, spec.seed);
        const MeasurementVector y = measure(target, ensemble);
        const double eta = spec.eta >= 0.0 ? spec.eta : kTenEps;
        for (std::size_t mi = 0; mi < spec.methods.size(); ++mi)
          outcomes[cell * per_cell + mi * spec.trials + trial] =
              detail::run_reconstruction(local, ensemble, y, eta,
                                         spec.methods[mi],
                                         target.choi.matrix());
      });

  for (long cell = 0; cell < 2 * grid; ++cell)
    for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
      ExperimentRow row;
      row.m = spec.m_grid[cell % grid];
      row.method = to_string(spec.methods[mi]);
      row.ensemble = to_string(kinds[cell / grid]);
      row.seed_stream = Rng::derive_seed(spec.seed, {tag, std::uint64_t(cell)});
      std::vector<detail::TrialOutcome> slice(
          outcomes.begin() + cell * per_cell + mi * spec.trials,
          outcomes.begin() + cell * per_cell + (mi + 1) * spec.trials);
      for (const auto& o : slice) res.solver_failures += o.solver_failed;
      res.total_solves += static_cast<long>(slice.size());
      detail::aggregate(row, std::move(slice), spec.threshold);
      res.rows.push_back(std::move(row));
    }
  return res;
}

/// Expectation values estimated from finite Born-rule samples; records the
/// induced noise norm and the reconstruction error against the shot budget.
inline ExperimentResult run_sample_complexity(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.shots_grid.empty())
    throw std::invalid_argument("sample_complexity: shots grid must be nonempty");
  ExperimentResult res;
  res.spec = spec;
  const std::uint64_t tag = detail::experiment_tag(spec.experiment);
  const Eigen::Index m =
      spec.m_grid.empty() ? 5 * spec.rank * spec.n * spec.n
                          : spec.m_grid.front();
  const long grid_n = static_cast<long>(spec.shots_grid.size());
  const Method method = spec.methods.empty() ? Method::CptFit : spec.methods[0];
  std::vector<detail::TrialOutcome> outcomes(grid_n * spec.trials);

  detail::parallel_for(grid_n * spec.trials, spec.threads, [&](long task) {
    const long gi = task / spec.trials;
    const long trial = task % spec.trials;
    const long shots = spec.shots_grid[gi];
    Rng rng = Rng::substream(spec.seed, {tag, std::uint64_t(gi),
                                         std::uint64_t(trial)});
    const QuantumChannel target = detail::make_target(spec, rng);
    const MeasurementEnsemble ensemble =
        detail::make_ensemble(spec, m, spec.n, rng, spec.seed);
    const MeasurementVector exact = measure(target, ensemble);
    MeasurementVector sampled;
    sampled.values.resize(ensemble.size());
    for (Eigen::Index i = 0; i < ensemble.size(); ++i)
      sampled.values(i) =
          sample_expectation(target, ensemble.settings[i], shots, rng);
    const double noise_norm = (sampled.values - exact.values).norm();
    sampled.noise_strength = noise_norm;
    const double eta = spec.eta >= 0.0 ? spec.eta : noise_norm + kTenEps;
    detail::TrialOutcome o = detail::run_reconstruction(
        spec, ensemble, sampled, eta, method, target.choi.matrix());
    o.noise_norm = noise_norm;
    outcomes[task] = o;
  });

  for (long gi = 0; gi < grid_n; ++gi) {
    ExperimentRow row;
    row.m = m;
    row.r = spec.rank;
    row.shots = spec.shots_grid[gi];
    row.method = to_string(method);
    row.ensemble = to_string(spec.ensemble);
    row.seed_stream = Rng::derive_seed(spec.seed, {tag, std::uint64_t(gi)});
    std::vector<detail::TrialOutcome> slice(
        outcomes.begin() + gi * spec.trials,
        outcomes.begin() + (gi + 1) * spec.trials);
    for (const auto& o : slice) res.solver_failures += o.solver_failed;
    res.total_solves += static_cast<long>(slice.size());
    detail::aggregate(row, std::move(slice), spec.threshold);
    res.rows.push_back(std::move(row));
  }
  return res;
}

/// Analytic-oracle battery: moment identities, projector algebra, tensor
/// network bound, plus a deliberate mutation control.
inline ExperimentResult run_verify_moments(const ExperimentSpec& spec) {
  spec.validate();
  std::vector<std::string> checks = spec.checks;
  if (checks.empty() && !spec.checks.empty())
    throw std::invalid_argument("verify_moments: empty check list");
  if (checks.empty())
    checks = {"s4", "moment2", "moment4", "tn_bound", "u_moment2",
              "mutation_control"};
  if (checks.empty())
    throw std::invalid_argument("verify_moments: empty check list");
  ExperimentResult res;
  res.spec = spec;
  const std::uint64_t tag = detail::experiment_tag(spec.experiment);

  auto push = [&](const std::string& name, double estimate, double reference,
                  double tol, bool pass) {
    ExperimentRow row;
    row.check = name;
    row.trials = 1;
    row.estimate = estimate;
    row.reference = reference;
    row.tolerance = tol;
    row.passed = pass ? 1 : 0;
    row.successes = pass ? 1 : 0;
    row.success_rate = pass ? 1.0 : 0.0;
    row.seed_stream = Rng::derive_seed(spec.seed, {tag});
    res.rows.push_back(std::move(row));
  };

  for (const std::string& check : checks) {
    Rng rng = Rng::substream(spec.seed, {tag, std::hash<std::string>{}(check)});
    if (check == "s4") {
      for (Eigen::Index n : {2, 3, 4}) {
        const S4ProjectorSet s4 = s4_projectors(n);
        const Eigen::Index dim = n * n * n * n;
        ComplexMatrix sum = ComplexMatrix::Zero(dim, dim);
        double worst = 0.0;
        double dim_sum = 0.0;
        for (int i = 0; i < 5; ++i) {
          sum += s4.projectors[i].matrix();
          dim_sum += s4.dims[i];
          worst = std::max(
              worst, std::abs(s4.projectors[i].matrix().trace().real() -
                              s4.dims[i]));
          for (int j = 0; j < 5; ++j) {
            const ComplexMatrix prod =
                s4.projectors[i].matrix() * s4.projectors[j].matrix();
            const ComplexMatrix expect =
                i == j ? s4.projectors[i].matrix()
                       : ComplexMatrix::Zero(dim, dim);
            worst = std::max(worst, (prod - expect).norm());
          }
        }
        worst = std::max(
            worst, (sum - ComplexMatrix::Identity(dim, dim)).norm());
        worst = std::max(worst, std::abs(dim_sum - double(dim)));
        push("s4_n" + std::to_string(n), worst, 0.0, 1e-9, worst <= 1e-9);
      }
    } else if (check == "moment2" || check == "mutation_control") {
      const bool mutate = check == "mutation_control";
      int failures = 0;
      const int triples = mutate ? 3 : 20;
      double worst_sigma = 0.0;
      for (int trip = 0; trip < triples; ++trip) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.integer(3));
        ComplexMatrix araw(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          araw(i, i) = rng.gaussian();
          for (Eigen::Index j = i + 1; j < n; ++j) {
            const Complex v = rng.cgaussian() / std::sqrt(2.0);
            araw(i, j) = v;
            araw(j, i) = std::conj(v);
          }
        }
        araw -= (araw.trace() / double(n)) * ComplexMatrix::Identity(n, n);
        const HermitianOperator a(araw);
        const HermPreservingMap mmap =
            random_cone_element(n, n, 2.0 * double(n), rng);
        double analytic = moment2_analytic(a, mmap);
        if (mutate) analytic *= 1.05;  // deliberately wrong coefficient
        const McEstimate mc = moment_mc(a, mmap, 2, spec.mc_samples, rng);
        const double sigma =
            std::abs(mc.mean - analytic) / std::max(mc.std_error, 1e-300);
        worst_sigma = std::max(worst_sigma, sigma);
        if (sigma > 3.0) ++failures;
      }
      if (mutate)
        push(check, double(failures), double(triples), 3.0,
             failures == triples);
      else
        push(check, worst_sigma, 0.0, 3.0, failures == 0);
    } else if (check == "moment4") {
      int failures = 0;
      double worst_sigma = 0.0;
      for (Eigen::Index n : {2, 3}) {
        ComplexMatrix araw(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          araw(i, i) = rng.gaussian();
          for (Eigen::Index j = i + 1; j < n; ++j) {
            const Complex v = rng.cgaussian() / std::sqrt(2.0);
            araw(i, j) = v;
            araw(j, i) = std::conj(v);
          }
        }
        araw -= (araw.trace() / double(n)) * ComplexMatrix::Identity(n, n);
        const HermitianOperator a(araw);
        const HermPreservingMap mmap =
            random_cone_element(n, n, 2.0 * double(n), rng);
        const double exact = moment4_exact_s4(a, mmap);
        const McEstimate mc = moment_mc(a, mmap, 4, spec.mc_samples, rng);
        const double sigma =
            std::abs(mc.mean - exact) / std::max(mc.std_error, 1e-300);
        worst_sigma = std::max(worst_sigma, sigma);
        if (sigma > 3.0) ++failures;
      }
      push(check, worst_sigma, 0.0, 3.0, failures == 0);
    } else if (check == "tn_bound") {
      long violations = 0;
      const long networks = 1000;
      for (long t = 0; t < networks; ++t) {
        const TensorNetwork tn = [&] {
          TensorNetwork net;
          const int count = 3 + static_cast<int>(rng.integer(3));
          std::vector<std::pair<int, int>> open;
          for (int i = 0; i < count; ++i) {
            Tensor tensor;
            const int legs = 2 + static_cast<int>(rng.integer(3));
            for (int l = 0; l < legs; ++l) {
              tensor.dims.push_back(2 + static_cast<Eigen::Index>(rng.integer(3)));
              open.emplace_back(i, l);
            }
            tensor.data.resize(tensor.size());
            net.tensors.push_back(std::move(tensor));
          }
          // random pairing; re-roll dimensions so paired legs agree
          while (open.size() >= 2) {
            const std::size_t a = rng.integer(open.size());
            std::size_t b = a;
            int guard = 0;
            while ((open[b].first == open[a].first) && guard++ < 64)
              b = rng.integer(open.size());
            if (open[b].first == open[a].first) break;
            auto [ta, la] = open[a];
            auto [tb, lb] = open[b];
            net.tensors[tb].dims[lb] = net.tensors[ta].dims[la];
            net.contractions.push_back({{ta, la}, {tb, lb}});
            open.erase(open.begin() + std::max(a, b));
            open.erase(open.begin() + std::min(a, b));
          }
          for (auto& tensor : net.tensors) {
            tensor.data.assign(tensor.size(), Complex(0));
            for (auto& v : tensor.data) v = rng.cgaussian();
          }
          return net;
        }();
        const Tensor c = contract_network(tn);
        if (c.frobenius() > tn_bound(tn) * (1.0 + 1e-10)) ++violations;
      }
      push(check, double(violations), 0.0, 0.0, violations == 0);
    } else if (check == "u_moment2") {
      const Eigen::Index n = 3;
      const HermitianOperator a0 = default_A0(n, n);
      const long samples = std::max<long>(spec.mc_samples, 1000);
      ComplexMatrix mean = ComplexMatrix::Zero(n * n, n * n);
      RealMatrix var_acc = RealMatrix::Zero(n * n, n * n);
      for (long s = 0; s < samples; ++s) {
        const ComplexMatrix u = haar_unitary(n, rng);
        const ComplexMatrix a = u * a0.matrix() * u.adjoint();
        const ComplexMatrix t = tensor_product(a, a);
        mean += t;
        var_acc += t.cwiseAbs2();
      }
      mean /= double(samples);
      const ComplexMatrix analytic = u_moment2_analytic(a0).matrix();
      double var_sum = 0.0;
      for (Eigen::Index i = 0; i < n * n; ++i)
        for (Eigen::Index j = 0; j < n * n; ++j)
          var_sum += std::max(
              0.0, var_acc(i, j) / double(samples) - std::norm(mean(i, j)));
      const double se_frob = std::sqrt(var_sum / double(samples));
      const double dev = (mean - analytic).norm();
      push(check, dev, 0.0, 3.0 * se_frob, dev <= 3.0 * se_frob);
    } else {
      throw std::invalid_argument("verify_moments: unknown check " + check);
    }
  }
  res.total_solves = static_cast<long>(res.rows.size());
  return res;
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  switch (spec.experiment) {
    case Experiment::SuccessRate: return run_success_rate(spec);
    case Experiment::RankPhase: return run_rank_phase(spec);
    case Experiment::NoiseSweep: return run_noise_sweep(spec);
    case Experiment::MismatchSweep: return run_mismatch_sweep(spec);
    case Experiment::ObservableRank: return run_observable_rank(spec);
    case Experiment::PauliCompare: return run_pauli_compare(spec);
    case Experiment::SampleComplexity: return run_sample_complexity(spec);
    case Experiment::VerifyMoments: return run_verify_moments(spec);
  }
  throw std::invalid_argument("run_experiment: unknown experiment");
}

// ---------------------------------------------------------------------------
// Spec (de)serialization for config files

inline Json spec_to_json(const ExperimentSpec& s) {
  Json j;
  j["experiment"] = to_string(s.experiment);
  j["n"] = s.n;
  j["rank"] = s.rank;
  j["m_grid"] = s.m_grid;
  j["rank_grid"] = s.rank_grid;
  j["trials"] = s.trials;
  Json methods = Json::array();
  for (Method m : s.methods) methods.push_back(to_string(m));
  j["methods"] = std::move(methods);
  j["noise_grid"] = s.noise_grid;
  j["mismatch_grid"] = s.mismatch_grid;
  j["rank_a_grid"] = s.rank_a_grid;
  j["shots_grid"] = s.shots_grid;
  j["checks"] = s.checks;
  j["ensemble"] = to_string(s.ensemble);
  j["circuit_depth"] = s.circuit_depth;
  j["target"] = s.target;
  j["noise"] = s.noise;
  j["eta"] = s.eta;
  j["shots"] = s.shots;
  j["seed"] = s.seed;
  j["threshold"] = s.threshold;
  j["mc_samples"] = s.mc_samples;
  j["uniform_protocol"] = s.uniform_protocol;
  j["failure_cap"] = s.failure_cap;
  j["threads"] = s.threads;
  j["out"] = s.out;
  j["format"] = s.format;
  j["solver_max_iter"] = s.solver.max_iter;
  j["solver_eps"] = s.solver.eps_primal;
  j["cpt_max_iter"] = s.cpt.max_iter;
  return j;
}

inline ExperimentSpec spec_from_json(const Json& j) {
  ExperimentSpec s;
  if (j.contains("experiment")) {
    const auto e = experiment_from_string(j["experiment"].get<std::string>());
    if (!e) throw std::invalid_argument("unknown experiment");
    s.experiment = *e;
  }
  s.n = j.value("n", s.n);
  s.rank = j.value("rank", s.rank);
  if (j.contains("m_grid"))
    s.m_grid = j["m_grid"].get<std::vector<Eigen::Index>>();
  if (j.contains("rank_grid"))
    s.rank_grid = j["rank_grid"].get<std::vector<Eigen::Index>>();
  s.trials = j.value("trials", s.trials);
  if (j.contains("methods")) {
    s.methods.clear();
    for (const auto& name : j["methods"]) {
      const auto m = method_from_string(name.get<std::string>());
      if (!m) throw std::invalid_argument("unknown method");
      s.methods.push_back(*m);
    }
  }
  if (j.contains("noise_grid"))
    s.noise_grid = j["noise_grid"].get<std::vector<double>>();
  if (j.contains("mismatch_grid"))
    s.mismatch_grid = j["mismatch_grid"].get<std::vector<double>>();
  if (j.contains("rank_a_grid"))
    s.rank_a_grid = j["rank_a_grid"].get<std::vector<Eigen::Index>>();
  if (j.contains("shots_grid"))
    s.shots_grid = j["shots_grid"].get<std::vector<long>>();
  if (j.contains("checks"))
    s.checks = j["checks"].get<std::vector<std::string>>();
  if (j.contains("ensemble")) {
    const std::string k = j["ensemble"].get<std::string>();
    s.ensemble = k == "pauli"     ? EnsembleKind::Pauli
                 : k == "circuit" ? EnsembleKind::Circuit
                                  : EnsembleKind::Generic;
  }
  s.circuit_depth = j.value("circuit_depth", s.circuit_depth);
  s.target = j.value("target", s.target);
  s.noise = j.value("noise", s.noise);
  s.eta = j.value("eta", s.eta);
  s.shots = j.value("shots", s.shots);
  s.seed = j.value("seed", s.seed);
  s.threshold = j.value("threshold", s.threshold);
  s.mc_samples = j.value("mc_samples", s.mc_samples);
  s.uniform_protocol = j.value("uniform_protocol", s.uniform_protocol);
  s.failure_cap = j.value("failure_cap", s.failure_cap);
  s.threads = j.value("threads", s.threads);
  s.out = j.value("out", s.out);
  s.format = j.value("format", s.format);
  s.solver.max_iter = j.value("solver_max_iter", s.solver.max_iter);
  if (j.contains("solver_eps")) {
    s.solver.eps_primal = j["solver_eps"].get<double>();
    s.solver.eps_dual = s.solver.eps_primal;
  }
  s.cpt.max_iter = j.value("cpt_max_iter", s.cpt.max_iter);
  return s;
}

}  // namespace qpt

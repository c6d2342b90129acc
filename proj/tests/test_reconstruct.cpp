#include <catch2/catch.hpp>

#include "qpt/io.hpp"
#include "qpt/reconstruct.hpp"

using namespace qpt;

namespace {

constexpr double kTinyEta = 10.0 * 2.220446049250313e-16;

MeasurementEnsemble generic(Eigen::Index n, Eigen::Index m, std::uint64_t seed,
                            Eigen::Index rank_a = -1) {
  Rng rng(seed);
  return gen_generic_ensemble(n, m, default_A0(n, rank_a < 0 ? n : rank_a),
                              rng, seed);
}

}  // namespace

TEST_CASE("cpt_fit recovers low-rank channels from few measurements") {
  const Eigen::Index n = 4, r = 2, m = 200;  // m >= 5 r n^2 = 160
  Rng rng(1001);
  const QuantumChannel t0 = random_rank_r_channel(n, r, rng);
  const MeasurementEnsemble e = generic(n, m, 42);
  const MeasurementVector y = measure(t0, e);
  const ReconstructionResult rec = cpt_fit(e, y);
  REQUIRE(reconstruction_error(rec.choi, t0.choi.matrix()) <= 1e-5);

  // output is CPT within solver tolerance
  const HermEig eig = herm_eig(HermitianOperator(rec.choi));
  REQUIRE(eig.eigenvalues.minCoeff() >= -1e-7);
  REQUIRE((partial_trace_first(rec.choi, n, n) -
           ComplexMatrix::Identity(n, n))
              .norm() <= 1e-7);
}

TEST_CASE("cpt_fit at full measurement dimension recovers any channel") {
  const Eigen::Index n = 2, m = 12;  // n^4 - n^2
  const MeasurementEnsemble e = generic(n, m, 7);
  const QuantumChannel dep = depolarizing_channel(n);  // full Kraus rank
  const MeasurementVector y = measure(dep, e);
  const ReconstructionResult rec = cpt_fit(e, y);
  REQUIRE(reconstruction_error(rec.choi, dep.choi.matrix()) <= 1e-5);
}

TEST_CASE("cpt_fit rejects empty measurement sets") {
  MeasurementEnsemble empty;
  empty.n = 2;
  MeasurementVector y;
  y.values = RealVector(0);
  REQUIRE_THROWS_AS(cpt_fit(empty, y), std::invalid_argument);
}

TEST_CASE("cpt_fit conic cross-check path agrees") {
  const Eigen::Index n = 2, m = 20;
  Rng rng(5);
  const QuantumChannel t0 = random_rank_r_channel(n, 1, rng);
  const MeasurementEnsemble e = generic(n, m, 11);
  const MeasurementVector y = measure(t0, e);
  const ReconstructionResult fast = cpt_fit(e, y);
  CptFitConfig via;
  via.via_conic_solver = true;
  const ReconstructionResult sdp = cpt_fit(e, y, via);
  REQUIRE(reconstruction_error(fast.choi, sdp.choi) <= 1e-5);
  REQUIRE(reconstruction_error(sdp.choi, t0.choi.matrix()) <= 1e-5);
}

TEST_CASE("constrained trace norm minimization") {
  const Eigen::Index n = 3, r = 1, m = 45;  // 5 r n^2
  Rng rng(2002);
  const QuantumChannel t0 = random_rank_r_channel(n, r, rng);
  const MeasurementEnsemble e = generic(n, m, 13);
  const MeasurementVector y = measure(t0, e);
  const ReconstructionResult rec = trace_norm_min(e, y, kTinyEta, true);
  REQUIRE(rec.status == SolveStatus::Optimal);
  REQUIRE(reconstruction_error(rec.choi, t0.choi.matrix()) <= 1e-5);
  // Choi trace norm of a channel is n
  REQUIRE(rec.objective == Approx(double(n)).margin(1e-5));
  REQUIRE(rec.residual <= kTinyEta + 1e-6);
}

TEST_CASE("unconstrained trace norm with huge eta returns zero") {
  const Eigen::Index n = 2, m = 10;
  Rng rng(3003);
  const QuantumChannel t0 = random_rank_r_channel(n, 2, rng);
  const MeasurementEnsemble e = generic(n, m, 17);
  const MeasurementVector y = measure(t0, e);
  const double eta = 2.0 * y.values.norm();
  const ReconstructionResult rec = trace_norm_min(e, y, eta, false);
  REQUIRE(rec.objective <= 1e-5);
  REQUIRE(rec.choi.norm() <= 1e-4);
}

TEST_CASE("unconstrained trace norm recovers in the generous regime") {
  const Eigen::Index n = 2, r = 1, m = 30;
  Rng rng(3004);
  const QuantumChannel t0 = random_rank_r_channel(n, r, rng);
  const MeasurementEnsemble e = generic(n, m, 19);
  const MeasurementVector y = measure(t0, e);
  const ReconstructionResult rec = trace_norm_min(e, y, kTinyEta, false);
  REQUIRE(reconstruction_error(rec.choi, t0.choi.matrix()) <= 1e-4);
}

TEST_CASE("constrained diamond norm minimization") {
  const Eigen::Index n = 2, r = 1, m = 20;  // 5 n^2
  Rng rng(4004);
  const QuantumChannel t0 = random_rank_r_channel(n, r, rng);
  const MeasurementEnsemble e = generic(n, m, 23);
  const MeasurementVector y = measure(t0, e);
  const ReconstructionResult rec = diamond_norm_min(e, y, kTinyEta, true);
  REQUIRE(reconstruction_error(rec.choi, t0.choi.matrix()) <= 1e-5);
  REQUIRE(rec.objective == Approx(1.0).margin(1e-5));
}

TEST_CASE("unconstrained diamond norm objective decreases with error") {
  // diagnostic trend over a noise sweep: the optimal value falls as the
  // reconstruction error grows
  const Eigen::Index n = 2, m = 20;
  Rng rng(5005);
  const QuantumChannel t0 = random_rank_r_channel(n, 1, rng);
  const MeasurementEnsemble e = generic(n, m, 29);
  const MeasurementVector clean = measure(t0, e);
  std::vector<double> errors, objectives;
  for (double strength : {0.0, 0.3, 0.9}) {
    MeasurementVector y = clean;
    if (strength > 0) y = add_noise(clean, strength, rng);
    const ReconstructionResult rec =
        diamond_norm_min(e, y, strength + kTinyEta, false);
    errors.push_back(reconstruction_error(rec.choi, t0.choi.matrix()));
    objectives.push_back(rec.objective);
  }
  REQUIRE(errors.front() < errors.back());
  REQUIRE(objectives.front() > objectives.back());
}

TEST_CASE("residuals respect the data-fidelity constraint") {
  const Eigen::Index n = 2, m = 16;
  Rng rng(6006);
  const QuantumChannel t0 = random_rank_r_channel(n, 2, rng);
  const MeasurementEnsemble e = generic(n, m, 31);
  MeasurementVector y = measure(t0, e);
  y = add_noise(y, 0.05, rng);
  const double eta = 0.05 + kTinyEta;
  for (const Method method :
       {Method::TraceNorm, Method::TraceNormConstrained, Method::DiamondNorm,
        Method::DiamondNormConstrained}) {
    const ReconstructionResult rec = reconstruct(e, y, method, eta);
    REQUIRE(rec.residual <= eta + 1e-6);
  }
  const ReconstructionResult fit = cpt_fit(e, y);
  REQUIRE(fit.residual <= eta + 1e-6);  // the fit only does better
}

TEST_CASE("infeasible data-fidelity ball is detected") {
  const Eigen::Index n = 2, m = 20;
  Rng rng(7007);
  const MeasurementEnsemble e = generic(n, m, 37);
  MeasurementVector y;
  y.values = RealVector(m);
  for (Eigen::Index i = 0; i < m; ++i) y.values(i) = 3.0 * rng.gaussian();
  SolverConfig cfg;
  cfg.max_iter = 30000;
  const ReconstructionResult rec = trace_norm_min(e, y, 0.0, true, cfg);
  REQUIRE(rec.status == SolveStatus::Infeasible);
}

TEST_CASE("centering the observables does not change the reconstruction") {
  const Eigen::Index n = 2, m = 20;
  Rng rng(8008);
  const QuantumChannel t0 = random_rank_r_channel(n, 1, rng);
  // base observable with a trace component
  ComplexMatrix shifted = default_A0(n, n).matrix() +
                          0.4 * ComplexMatrix::Identity(n, n);
  Rng erng(41);
  const MeasurementEnsemble e =
      gen_generic_ensemble(n, m, HermitianOperator(shifted), erng, 41);
  const MeasurementVector y = measure(t0, e);

  MeasurementEnsemble centered = e;
  MeasurementVector y_centered = y;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double tr =
        e.settings[i].observable.matrix().trace().real() / double(n);
    centered.settings[i].observable = HermitianOperator(
        e.settings[i].observable.matrix() -
        tr * ComplexMatrix::Identity(n, n));
    y_centered.values(i) -= tr;
  }

  const ReconstructionResult r1 = cpt_fit(e, y);
  const ReconstructionResult r2 = cpt_fit(centered, y_centered);
  REQUIRE(reconstruction_error(r1.choi, r2.choi) <= 1e-5);

  const ReconstructionResult t1 = trace_norm_min(e, y, kTinyEta, true);
  const ReconstructionResult t2 =
      trace_norm_min(centered, y_centered, kTinyEta, true);
  REQUIRE(reconstruction_error(t1.choi, t2.choi) <= 1e-5);
}

TEST_CASE("rescaling the measurement map does not change the reconstruction") {
  const Eigen::Index n = 2, m = 18;
  Rng rng(9009);
  const QuantumChannel t0 = random_rank_r_channel(n, 1, rng);
  const MeasurementEnsemble e = generic(n, m, 43);
  const MeasurementVector y = measure(t0, e);

  const double c = 3.7;
  MeasurementEnsemble scaled = e;
  MeasurementVector y_scaled = y;
  for (Eigen::Index i = 0; i < m; ++i) {
    scaled.settings[i].observable =
        HermitianOperator(c * e.settings[i].observable.matrix());
    y_scaled.values(i) *= c;
  }

  const ReconstructionResult r1 = cpt_fit(e, y);
  const ReconstructionResult r2 = cpt_fit(scaled, y_scaled);
  REQUIRE(reconstruction_error(r1.choi, r2.choi) <= 1e-5);

  const ReconstructionResult t1 = trace_norm_min(e, y, kTinyEta, true);
  const ReconstructionResult t2 =
      trace_norm_min(scaled, y_scaled, c * kTinyEta, true);
  REQUIRE(reconstruction_error(t1.choi, t2.choi) <= 1e-5);
}

TEST_CASE("diamond_norm") {
  SECTION("CPT channels have diamond norm one, homogeneously") {
    Rng rng(111);
    const QuantumChannel t = random_rank_r_channel(3, 2, rng);
    REQUIRE(diamond_norm(t) == Approx(1.0).margin(1e-6));
    const HermPreservingMap half{3, HermitianOperator(0.5 * t.choi.matrix())};
    REQUIRE(diamond_norm(half) == Approx(0.5).margin(1e-6));
  }

  SECTION("difference of rotations against the state-grid oracle") {
    const double theta = 0.7;
    ComplexMatrix u = ComplexMatrix::Identity(2, 2);
    u(1, 1) = std::exp(Complex(0, theta));
    const QuantumChannel rot = unitary_channel(u);
    const QuantumChannel id = identity_channel(2);
    const ComplexMatrix delta = id.choi.matrix() - rot.choi.matrix();

    // oracle: maximize the output trace distance over a fine Bloch-sphere
    // grid of inputs, then over a maximally entangled ancilla probe.
    double best = 0.0;
    const int grid = 60;
    for (int it = 0; it <= grid; ++it)
      for (int ip = 0; ip < 2 * grid; ++ip) {
        const double th = M_PI * it / grid;
        const double ph = M_PI * ip / grid;
        ComplexVector v(2);
        v(0) = std::cos(th / 2.0);
        v(1) = std::sin(th / 2.0) * std::exp(Complex(0, ph));
        const HermitianOperator rho = StateVector(v).projector();
        const ComplexMatrix out = detail::apply_choi(delta, rho.matrix(), 2);
        best = std::max(best, schatten_norm(out, 1));
      }
    {
      ComplexMatrix out = ComplexMatrix::Zero(4, 4);
      for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 2; ++j) {
          ComplexMatrix eij = ComplexMatrix::Zero(2, 2);
          eij(i, j) = 1.0;
          out += 0.5 * tensor_product(detail::apply_choi(delta, eij, 2), eij);
        }
      best = std::max(best, schatten_norm(out, 1));
    }
    const double sdp = diamond_norm(2, delta);
    REQUIRE(sdp == Approx(best).margin(1e-3));
  }
}

TEST_CASE("reconstruction_error") {
  Rng rng(222);
  const QuantumChannel t = random_rank_r_channel(2, 2, rng);
  REQUIRE(reconstruction_error(t.choi.matrix(), t.choi.matrix()) == 0.0);
  const QuantumChannel s = random_rank_r_channel(2, 2, rng);
  const double p1 = reconstruction_error(t.choi.matrix(), s.choi.matrix(), 1);
  const double p2 = reconstruction_error(t.choi.matrix(), s.choi.matrix(), 2);
  REQUIRE(p1 >= p2);
}

TEST_CASE("result json") {
  const Eigen::Index n = 2, m = 14;
  Rng rng(333);
  const QuantumChannel t0 = random_rank_r_channel(n, 1, rng);
  const MeasurementEnsemble e = generic(n, m, 47);
  const MeasurementVector y = measure(t0, e);
  const ReconstructionResult rec = cpt_fit(e, y);
  const Json j =
      result_to_json(rec, reconstruction_error(rec.choi, t0.choi.matrix()));
  REQUIRE(j["method"] == "cpt-fit");
  REQUIRE(j.contains("error_vs_truth"));
  REQUIRE(j["channel"]["rows"] == 4);
}

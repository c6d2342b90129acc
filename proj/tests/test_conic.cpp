#include <catch2/catch.hpp>

#include <fstream>

#include "qpt/conic.hpp"
#include "qpt/reconstruct.hpp"
#include "qpt/rng.hpp"

using namespace qpt;

namespace {

ComplexMatrix random_hermitian(Eigen::Index n, Rng& rng) {
  ComplexMatrix h(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    h(i, i) = rng.gaussian();
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Complex v = rng.cgaussian() / std::sqrt(2.0);
      h(i, j) = v;
      h(j, i) = std::conj(v);
    }
  }
  return h;
}

}  // namespace

TEST_CASE("project_psd") {
  SECTION("PSD input is unchanged") {
    Rng rng(1);
    const ComplexMatrix g = random_hermitian(4, rng);
    const HermitianOperator psd(g * g);  // squares are PSD
    REQUIRE((project_psd(psd).matrix() - psd.matrix()).norm() <
            1e-10 * std::max(1.0, psd.matrix().norm()));
  }
  SECTION("diag(1, -2) clips to diag(1, 0)") {
    ComplexMatrix d = ComplexMatrix::Zero(2, 2);
    d(0, 0) = 1.0;
    d(1, 1) = -2.0;
    const ComplexMatrix p = project_psd(HermitianOperator(d)).matrix();
    REQUIRE(std::abs(p(0, 0) - Complex(1, 0)) < 1e-14);
    REQUIRE(std::abs(p(1, 1)) < 1e-14);
  }
  SECTION("idempotent") {
    Rng rng(2);
    const HermitianOperator h(random_hermitian(5, rng));
    const HermitianOperator once = project_psd(h);
    REQUIRE((project_psd(once).matrix() - once.matrix()).norm() < 1e-10);
  }
  SECTION("2x2 closed form via eigenvalues") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const ComplexMatrix h = random_hermitian(2, rng);
      const ComplexMatrix p = project_psd(HermitianOperator(h)).matrix();
      Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h);
      const ComplexMatrix expect =
          es.eigenvectors() *
          es.eigenvalues().cwiseMax(0.0).asDiagonal() *
          es.eigenvectors().adjoint();
      REQUIRE((p - expect).norm() < 1e-12);
      // nearest PSD in Frobenius norm: no PSD candidate from a coarse
      // parameter grid does better
      const double dist = (p - h).norm();
      for (double a = 0.0; a <= 2.0; a += 0.5)
        for (double b = 0.0; b <= 2.0; b += 0.5) {
          ComplexMatrix cand = ComplexMatrix::Zero(2, 2);
          cand(0, 0) = a;
          cand(1, 1) = b;
          REQUIRE((cand - h).norm() >= dist - 1e-9);
        }
    }
  }
}

TEST_CASE("project_affine") {
  Rng rng(4);
  SECTION("feasible points are fixed") {
    Eigen::SparseMatrix<double> l(1, 2);
    l.insert(0, 0) = 1.0;
    l.insert(0, 1) = 1.0;
    RealVector b(1);
    b << 1.0;
    AffineConstraint c(l, b);
    RealVector x(2);
    x << 0.25, 0.75;
    REQUIRE((project_affine(x, c) - x).norm() < 1e-12);
  }
  SECTION("projection of the origin onto the simplex plane") {
    Eigen::SparseMatrix<double> l(1, 2);
    l.insert(0, 0) = 1.0;
    l.insert(0, 1) = 1.0;
    RealVector b(1);
    b << 1.0;
    AffineConstraint c(l, b);
    const RealVector p = project_affine(RealVector::Zero(2), c);
    REQUIRE(p(0) == Approx(0.5));
    REQUIRE(p(1) == Approx(0.5));
  }
  SECTION("residual and orthogonality on random instances") {
    const Eigen::Index rows = 6, cols = 15;
    Eigen::SparseMatrix<double> l(rows, cols);
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        t.emplace_back(i, j, rng.gaussian());
    l.setFromTriplets(t.begin(), t.end());
    RealVector b(rows);
    for (Eigen::Index i = 0; i < rows; ++i) b(i) = rng.gaussian();
    AffineConstraint c(l, b);
    RealVector v(cols);
    for (Eigen::Index i = 0; i < cols; ++i) v(i) = rng.gaussian();
    const RealVector p = c.project(v);
    REQUIRE(c.residual(p) <= 1e-10 * (1.0 + b.norm()));
    // normal-equation oracle: displacement lies in the row space
    const RealMatrix ld(l);
    const RealVector disp = v - p;
    const RealVector proj_disp =
        ld.transpose() *
        (ld * ld.transpose()).ldlt().solve(ld * disp);
    REQUIRE((disp - proj_disp).norm() < 1e-9);
  }
}

TEST_CASE("project_l2_ball") {
  RealVector center(2);
  center << 1.0, 2.0;
  SECTION("inside point unchanged") {
    RealVector v(2);
    v << 1.1, 2.1;
    REQUIRE((project_l2_ball(v, center, 1.0) - v).norm() == 0.0);
  }
  SECTION("radius zero maps to the center") {
    RealVector v(2);
    v << 5.0, 5.0;
    REQUIRE((project_l2_ball(v, center, 0.0) - center).norm() == 0.0);
  }
  SECTION("outside point lands on the sphere") {
    RealVector v = center;
    v(0) += 3.0;
    v(1) += 4.0;
    const RealVector p = project_l2_ball(v, center, 1.0);
    REQUIRE(p(0) - center(0) == Approx(0.6));
    REQUIRE(p(1) - center(1) == Approx(0.8));
  }
}

TEST_CASE("solve: minimal PSD program") {
  // min Tr X s.t. X >= 0, X_00 = 1 over Hermitian 2x2
  ConicProblem p;
  p.num_vars = 4;
  p.objective = RealVector::Zero(4);
  p.objective(0) = 1.0;
  p.objective(1) = 1.0;
  p.psd_cones.push_back({0, 2});
  Eigen::SparseMatrix<double> l(1, 4);
  l.insert(0, 0) = 1.0;
  p.equality_lhs = l;
  p.equality_rhs = RealVector::Ones(1);
  const SolverResult res = solve(p);
  REQUIRE(res.status == SolveStatus::Optimal);
  REQUIRE(res.objective == Approx(1.0).margin(1e-6));
  const ComplexMatrix x = smat(res.x.segment(0, 4), 2);
  REQUIRE(std::abs(x(0, 0) - Complex(1, 0)) < 1e-6);
  REQUIRE(std::abs(x(1, 1)) < 1e-6);
}

namespace {

// trace-norm epigraph of a fixed matrix: min Tr[H]/2 with
// H = [[X, -A], [-A^dagger, Y]] >= 0; the off-diagonal block is pinned.
double trace_norm_by_sdp(const ComplexMatrix& a) {
  const Eigen::Index d = a.rows();
  const Eigen::Index bd = 2 * d;
  detail::SvecIndex gi{bd};
  ConicProblem p;
  p.num_vars = gi.size();
  p.objective = RealVector::Zero(p.num_vars);
  for (Eigen::Index i = 0; i < bd; ++i) p.objective(gi.diag(i)) = 0.5;
  p.psd_cones.push_back({0, bd});
  std::vector<Eigen::Triplet<double>> t;
  RealVector rhs(2 * d * d);
  Eigen::Index row = 0;
  const double s2 = std::sqrt(2.0);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      t.emplace_back(row, gi.re(i, d + j), 1.0);
      rhs(row++) = -s2 * a(i, j).real();
      t.emplace_back(row, gi.im(i, d + j), 1.0);
      rhs(row++) = -s2 * a(i, j).imag();
    }
  Eigen::SparseMatrix<double> l(row, p.num_vars);
  l.setFromTriplets(t.begin(), t.end());
  p.equality_lhs = std::move(l);
  p.equality_rhs = rhs;
  const SolverResult res = solve(p);
  REQUIRE(res.status == SolveStatus::Optimal);
  return res.objective;
}

}  // namespace

TEST_CASE("solve: trace-norm epigraph block matrix") {
  ComplexMatrix d = ComplexMatrix::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = -4.0;
  REQUIRE(trace_norm_by_sdp(d) == Approx(7.0).margin(2e-6));

  Rng rng(6);
  const ComplexMatrix g = random_hermitian(3, rng);
  REQUIRE(trace_norm_by_sdp(g) ==
          Approx(schatten_norm(g, 1)).margin(2e-6));
}

TEST_CASE("solve: diamond norm of CPT channels is one") {
  Rng rng(8);
  const QuantumChannel t = random_rank_r_channel(2, 2, rng);
  REQUIRE(diamond_norm(t) == Approx(1.0).margin(1e-6));
}

TEST_CASE("solve: objective homogeneity") {
  // scaling the objective scales the optimum, argmin unchanged
  ConicProblem p;
  p.num_vars = 4;
  p.objective = RealVector::Zero(4);
  p.objective(0) = 1.0;
  p.objective(1) = 1.0;
  p.psd_cones.push_back({0, 2});
  Eigen::SparseMatrix<double> l(1, 4);
  l.insert(0, 0) = 1.0;
  p.equality_lhs = l;
  p.equality_rhs = RealVector::Ones(1);
  const SolverResult base = solve(p);
  ConicProblem p2 = p;
  p2.objective *= 5.0;
  const SolverResult scaled = solve(p2);
  REQUIRE(scaled.objective == Approx(5.0 * base.objective).margin(1e-5));
  REQUIRE((scaled.x - base.x).norm() < 1e-5);
}

TEST_CASE("solve: ball cone and nonnegative cone") {
  // min x subject to |x - 3| <= 1 (as a 1-d ball), x >= 0
  ConicProblem p;
  p.num_vars = 2;  // x duplicated through an equality to exercise both cones
  p.objective = RealVector::Zero(2);
  p.objective(0) = 1.0;
  RealVector center(1);
  center << 3.0;
  p.ball_cones.push_back({1, 1, center, 1.0, -1});
  p.nonneg_cones.push_back({0, 1});
  Eigen::SparseMatrix<double> l(1, 2);
  l.insert(0, 0) = 1.0;
  l.insert(0, 1) = -1.0;
  p.equality_lhs = l;
  p.equality_rhs = RealVector::Zero(1);
  const SolverResult res = solve(p);
  REQUIRE(res.status == SolveStatus::Optimal);
  REQUIRE(res.x(0) == Approx(2.0).margin(1e-6));
}

TEST_CASE("solve: validation rejects malformed problems") {
  ConicProblem p;
  p.num_vars = 4;
  p.objective = RealVector::Zero(4);
  p.psd_cones.push_back({0, 2});
  p.psd_cones.push_back({2, 2});  // overlaps the first slice
  p.equality_lhs = Eigen::SparseMatrix<double>(0, 4);
  p.equality_rhs = RealVector(0);
  REQUIRE_THROWS_AS(solve(p), std::invalid_argument);
}

TEST_CASE("solve: iteration trace file") {
  ConicProblem p;
  p.num_vars = 4;
  p.objective = RealVector::Zero(4);
  p.objective(0) = 1.0;
  p.objective(1) = 1.0;
  p.psd_cones.push_back({0, 2});
  Eigen::SparseMatrix<double> l(1, 4);
  l.insert(0, 0) = 1.0;
  p.equality_lhs = l;
  p.equality_rhs = RealVector::Ones(1);
  SolverConfig cfg;
  cfg.trace_csv_path = "solver_trace_test.csv";
  solve(p, cfg);
  std::ifstream in(cfg.trace_csv_path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "iter,primal_res,dual_res,objective");
  std::string first;
  REQUIRE(std::getline(in, first).good());
  std::remove(cfg.trace_csv_path.c_str());
}

TEST_CASE("solve: deterministic across runs") {
  ConicProblem p;
  p.num_vars = 9;
  p.objective = RealVector::Zero(9);
  for (Eigen::Index i = 0; i < 3; ++i) p.objective(i) = 1.0;
  p.psd_cones.push_back({0, 3});
  Eigen::SparseMatrix<double> l(2, 9);
  l.insert(0, 0) = 1.0;
  l.insert(1, 3) = 1.0;  // couple a diagonal and an off-diagonal coordinate
  p.equality_lhs = l;
  RealVector b(2);
  b << 1.0, 0.3;
  p.equality_rhs = b;
  const SolverResult r1 = solve(p);
  const SolverResult r2 = solve(p);
  REQUIRE((r1.x - r2.x).norm() == 0.0);
  REQUIRE(r1.iterations == r2.iterations);
}

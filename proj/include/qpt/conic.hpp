#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "qpt/linalg.hpp"
#include "qpt/types.hpp"

namespace qpt {

/// Frobenius-nearest positive semidefinite matrix: eigendecompose and clip
/// negative eigenvalues.
inline HermitianOperator project_psd(const HermitianOperator& h) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h.matrix());
  if (es.info() != Eigen::Success)
    throw EigNotConverged("project_psd: eigensolver did not converge");
  const RealVector lam = es.eigenvalues().cwiseMax(0.0);
  return HermitianOperator(es.eigenvectors() * lam.asDiagonal() *
                           es.eigenvectors().adjoint());
}

/// Euclidean projection onto the closed l2 ball around `center`.
inline RealVector project_l2_ball(const RealVector& v, const RealVector& center,
                                  double radius) {
  if (radius < 0.0)
    throw std::invalid_argument("project_l2_ball: radius must be >= 0");
  const RealVector diff = v - center;
  const double nrm = diff.norm();
  if (nrm <= radius) return v;
  if (nrm == 0.0) return center;
  return center + (radius / nrm) * diff;
}

/// Pre-factorized Euclidean projector onto {x : L x = b}. The factorization
/// depends on L only, so the right-hand side can be swapped cheaply between
/// solves.
class AffineConstraint {
 public:
  AffineConstraint() = default;

  AffineConstraint(Eigen::SparseMatrix<double> l, RealVector b)
      : l_(std::move(l)), b_(std::move(b)) {
    if (l_.rows() != b_.size())
      throw DimensionError("AffineConstraint: rhs length mismatch");
    lt_ = l_.transpose();
    Eigen::SparseMatrix<double> gram = l_ * lt_;
    // Tiny ridge keeps the factorization alive for (near) rank-deficient
    // constraint rows; one refinement step below restores the residual.
    double scale = 0.0;
    for (Eigen::Index i = 0; i < gram.rows(); ++i) scale += gram.coeff(i, i);
    scale = gram.rows() ? scale / double(gram.rows()) : 1.0;
    ridge_ = 1e-12 * std::max(scale, 1.0);
    Eigen::SparseMatrix<double> reg(gram.rows(), gram.cols());
    reg.setIdentity();
    gram += ridge_ * reg;
    ldlt_.compute(gram);
    if (ldlt_.info() != Eigen::Success)
      throw Error("AffineConstraint: factorization failed");
  }

  Eigen::Index rows() const { return l_.rows(); }
  Eigen::Index cols() const { return l_.cols(); }
  const RealVector& rhs() const { return b_; }
  void set_rhs(RealVector b) {
    if (b.size() != b_.size())
      throw DimensionError("AffineConstraint: rhs length mismatch");
    b_ = std::move(b);
  }

  RealVector project(const RealVector& v) const {
    if (l_.rows() == 0) return v;
    RealVector r = l_ * v - b_;
    RealVector x = v - lt_ * ldlt_.solve(r);
    r = l_ * x - b_;  // one refinement step against the ridge
    x -= lt_ * ldlt_.solve(r);
    return x;
  }

  double residual(const RealVector& x) const {
    return l_.rows() == 0 ? 0.0 : (l_ * x - b_).norm();
  }

 private:
  Eigen::SparseMatrix<double> l_, lt_;
  RealVector b_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  double ridge_ = 0.0;
};

inline RealVector project_affine(const RealVector& x,
                                 const AffineConstraint& constraint) {
  return constraint.project(x);
}

/// Hermitian d x d block, stored as an svec slice of length d^2.
struct PsdCone {
  Eigen::Index offset = 0;
  Eigen::Index dim = 0;
};

/// l2 ball over a real slice. If radius_coord >= 0 the radius is that
/// coordinate of the variable instead (second-order cone epigraph).
struct BallCone {
  Eigen::Index offset = 0;
  Eigen::Index len = 0;
  RealVector center;
  double radius = 0.0;
  Eigen::Index radius_coord = -1;
};

struct NonnegCone {
  Eigen::Index offset = 0;
  Eigen::Index len = 0;
};

struct ConicProblem {
  Eigen::Index num_vars = 0;
  RealVector objective;                    // minimized linear functional
  Eigen::SparseMatrix<double> equality_lhs;
  RealVector equality_rhs;
  std::vector<PsdCone> psd_cones;
  std::vector<BallCone> ball_cones;
  std::vector<NonnegCone> nonneg_cones;

  void validate() const {
    if (objective.size() != num_vars)
      throw std::invalid_argument("ConicProblem: objective length mismatch");
    if (equality_lhs.rows() > 0 && equality_lhs.cols() != num_vars)
      throw std::invalid_argument("ConicProblem: equality width mismatch");
    if (equality_lhs.rows() != equality_rhs.size())
      throw std::invalid_argument("ConicProblem: equality rhs mismatch");
    std::vector<char> taken(static_cast<std::size_t>(num_vars), 0);
    auto claim = [&](Eigen::Index off, Eigen::Index len) {
      if (off < 0 || len < 0 || off + len > num_vars)
        throw std::invalid_argument("ConicProblem: cone slice out of range");
      for (Eigen::Index i = off; i < off + len; ++i) {
        if (taken[static_cast<std::size_t>(i)])
          throw std::invalid_argument("ConicProblem: overlapping cone slices");
        taken[static_cast<std::size_t>(i)] = 1;
      }
    };
    for (const auto& c : psd_cones) claim(c.offset, c.dim * c.dim);
    for (const auto& c : ball_cones) {
      claim(c.offset, c.len);
      if (c.center.size() != c.len)
        throw std::invalid_argument("ConicProblem: ball center length");
      if (c.radius_coord >= 0)
        claim(c.radius_coord, 1);
      else if (c.radius < 0.0)
        throw std::invalid_argument("ConicProblem: negative ball radius");
    }
    for (const auto& c : nonneg_cones) claim(c.offset, c.len);
  }

  /// Swapping the equality right-hand side reuses the cached factorization.
  void set_equality_rhs(RealVector b) {
    if (b.size() != equality_rhs.size())
      throw DimensionError("ConicProblem: rhs length mismatch");
    equality_rhs = std::move(b);
    if (projector_) projector_->set_rhs(equality_rhs);
  }

  const AffineConstraint& projector() const {
    if (!projector_)
      projector_ =
          std::make_shared<AffineConstraint>(equality_lhs, equality_rhs);
    else
      projector_->set_rhs(equality_rhs);
    return *projector_;
  }

 private:
  mutable std::shared_ptr<AffineConstraint> projector_;
};

struct SolverConfig {
  long max_iter = 50000;
  double eps_primal = 1e-8;  // relative
  double eps_dual = 1e-8;    // relative
  double rho = 1.0;          // penalty, self-adaptive
  bool adaptive_rho = true;
  double over_relaxation = 1.6;  // in (1, 2)
  long check_every = 25;
  std::string trace_csv_path;  // per-check iteration trace when nonempty
};

enum class SolveStatus { Optimal, MaxIter, Infeasible };

inline std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::MaxIter: return "max_iter";
    case SolveStatus::Infeasible: return "infeasible";
  }
  return "?";
}

struct SolverResult {
  RealVector x;
  double objective = 0.0;
  SolveStatus status = SolveStatus::MaxIter;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  long iterations = 0;
};

namespace detail {

struct ConeWorkspace {
  std::vector<Eigen::SelfAdjointEigenSolver<ComplexMatrix>> eig;
};

inline void project_cones(const ConicProblem& p, RealVector& z,
                          ConeWorkspace& ws) {
  for (std::size_t k = 0; k < p.psd_cones.size(); ++k) {
    const PsdCone& c = p.psd_cones[k];
    ComplexMatrix h = smat(z.segment(c.offset, c.dim * c.dim), c.dim);
    ws.eig[k].compute(h);
    if (ws.eig[k].info() != Eigen::Success)
      throw EigNotConverged("solve: PSD projection eigensolver failed");
    const RealVector lam = ws.eig[k].eigenvalues().cwiseMax(0.0);
    h = ws.eig[k].eigenvectors() * lam.asDiagonal() *
        ws.eig[k].eigenvectors().adjoint();
    z.segment(c.offset, c.dim * c.dim) = svec(h);
  }
  for (const BallCone& c : p.ball_cones) {
    auto w = z.segment(c.offset, c.len);
    const RealVector diff = w - c.center;
    const double nrm = diff.norm();
    if (c.radius_coord < 0) {
      if (nrm > c.radius)
        w = c.center + (nrm > 0.0 ? c.radius / nrm : 0.0) * diff;
    } else {
      const double t = z(c.radius_coord);
      if (nrm <= t) continue;
      if (nrm <= -t) {
        w = c.center;
        z(c.radius_coord) = 0.0;
      } else {
        const double s = 0.5 * (nrm + t);
        w = c.center + (s / nrm) * diff;
        z(c.radius_coord) = s;
      }
    }
  }
  for (const NonnegCone& c : p.nonneg_cones)
    z.segment(c.offset, c.len) = z.segment(c.offset, c.len).cwiseMax(0.0);
}

}  // namespace detail

/// Consensus ADMM: x carries the linear objective and the equality
/// constraints, z the cone memberships. Deterministic; no randomness
/// anywhere in the solve.
inline SolverResult solve(const ConicProblem& p,
                          const SolverConfig& cfg = SolverConfig{}) {
  p.validate();
  if (!(cfg.over_relaxation > 1.0 && cfg.over_relaxation < 2.0))
    throw std::invalid_argument("solve: over_relaxation must be in (1, 2)");
  const Eigen::Index nv = p.num_vars;
  const AffineConstraint& aff = p.projector();

  RealVector x = RealVector::Zero(nv), z = RealVector::Zero(nv),
             u = RealVector::Zero(nv), z_prev(nv), xhat(nv), v(nv);
  detail::ConeWorkspace ws;
  ws.eig.resize(p.psd_cones.size());

  double rho = cfg.rho;
  const double alpha = cfg.over_relaxation;
  const double eps_abs = 1e-12;
  const double sqrt_n = std::sqrt(double(std::max<Eigen::Index>(nv, 1)));

  std::FILE* trace = nullptr;
  if (!cfg.trace_csv_path.empty()) {
    trace = std::fopen(cfg.trace_csv_path.c_str(), "w");
    if (trace) std::fprintf(trace, "iter,primal_res,dual_res,objective\n");
  }

  SolverResult best;
  best.x = x;
  double best_score = std::numeric_limits<double>::infinity();
  double stall_prev_res = std::numeric_limits<double>::infinity();
  double stall_prev_unorm = 0.0;
  int stall_count = 0;
  long iter = 0;
  SolveStatus status = SolveStatus::MaxIter;
  double r_prim = 0.0, r_dual = 0.0;

  for (iter = 1; iter <= cfg.max_iter; ++iter) {
    v = z - u - p.objective / rho;
    x = aff.project(v);
    xhat = alpha * x + (1.0 - alpha) * z;
    z_prev = z;
    z = xhat + u;
    detail::project_cones(p, z, ws);
    u += xhat - z;

    if (iter % cfg.check_every != 0 && iter != cfg.max_iter) continue;

    r_prim = (x - z).norm();
    r_dual = rho * (z - z_prev).norm();
    const double eps_pri =
        sqrt_n * eps_abs + cfg.eps_primal * std::max(x.norm(), z.norm());
    const double eps_dua =
        sqrt_n * eps_abs + cfg.eps_dual * rho * u.norm();
    if (trace)
      std::fprintf(trace, "%ld,%.12e,%.12e,%.12e\n", iter, r_prim, r_dual,
                   p.objective.dot(x));

    const double score = std::max(r_prim / std::max(eps_pri, 1e-300),
                                  r_dual / std::max(eps_dua, 1e-300));
    if (score < best_score) {
      best_score = score;
      best.x = z;
      best.primal_residual = r_prim;
      best.dual_residual = r_dual;
      best.iterations = iter;
    }

    if (r_prim <= eps_pri && r_dual <= eps_dua) {
      status = SolveStatus::Optimal;
      break;
    }

    // Divergence heuristic: the consensus gap stops shrinking while the
    // scaled dual variable keeps growing.
    if (iter % 2000 == 0) {
      const double unorm = u.norm();
      if (iter >= 6000 && r_prim > 1e3 * eps_pri &&
          r_prim > 0.999 * stall_prev_res && unorm > 1.05 * stall_prev_unorm) {
        if (++stall_count >= 3) {
          status = SolveStatus::Infeasible;
          break;
        }
      } else {
        stall_count = 0;
      }
      stall_prev_res = r_prim;
      stall_prev_unorm = unorm;
    }

    if (cfg.adaptive_rho && iter % 50 == 0) {
      if (r_prim > 10.0 * r_dual && rho < 1e6) {
        rho *= 2.0;
        u *= 0.5;
      } else if (r_dual > 10.0 * r_prim && rho > 1e-6) {
        rho *= 0.5;
        u *= 2.0;
      }
    }
  }
  if (trace) std::fclose(trace);

  SolverResult out;
  if (status == SolveStatus::Optimal) {
    out.x = z;  // cone-feasible iterate
    out.primal_residual = r_prim;
    out.dual_residual = r_dual;
  } else {
    out = best;
  }
  out.status = status;
  out.objective = p.objective.dot(out.x);
  out.iterations = std::min(iter, cfg.max_iter);
  return out;
}

}  // namespace qpt

#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qpt/channels.hpp"
#include "qpt/conic.hpp"
#include "qpt/measurements.hpp"
#include "qpt/types.hpp"

namespace qpt {

enum class Method {
  CptFit,
  TraceNorm,
  TraceNormConstrained,
  DiamondNorm,
  DiamondNormConstrained,
};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::CptFit: return "cpt-fit";
    case Method::TraceNorm: return "tn";
    case Method::TraceNormConstrained: return "tn-c";
    case Method::DiamondNorm: return "dn";
    case Method::DiamondNormConstrained: return "dn-c";
  }
  return "?";
}

inline std::optional<Method> method_from_string(const std::string& s) {
  if (s == "cpt-fit") return Method::CptFit;
  if (s == "tn") return Method::TraceNorm;
  if (s == "tn-c") return Method::TraceNormConstrained;
  if (s == "dn") return Method::DiamondNorm;
  if (s == "dn-c") return Method::DiamondNormConstrained;
  return std::nullopt;
}

struct ReconstructionResult {
  Eigen::Index dim = 0;
  ComplexMatrix choi;    // J of the estimate; Hermitian for constrained methods
  double objective = 0.0;  // regularizer value, or the residual for CptFit
  SolveStatus status = SolveStatus::MaxIter;
  double residual = 0.0;  // ||A(T_hat) - y||_2
  long iterations = 0;
  double wall_ms = 0.0;
  Method method = Method::CptFit;
  double eta = 0.0;
};

/// ||J(T_hat) - J(T_0)||_p via singular values; p = 2 is the Frobenius error.
inline double reconstruction_error(const ComplexMatrix& j_hat,
                                   const ComplexMatrix& j_truth,
                                   double p = 2.0) {
  if (j_hat.rows() != j_truth.rows() || j_hat.cols() != j_truth.cols())
    throw DimensionError("reconstruction_error: dimension mismatch");
  return schatten_norm(j_hat - j_truth, p);
}

namespace detail {

// Coordinate layout of svec for a Hermitian d x d block: d diagonal entries,
// then (sqrt2 Re, sqrt2 Im) pairs of the strict upper triangle, row-major.
struct SvecIndex {
  Eigen::Index d = 0;
  Eigen::Index diag(Eigen::Index i) const { return i; }
  Eigen::Index pair(Eigen::Index i, Eigen::Index j) const {
    return i * (d - 1) - i * (i - 1) / 2 + (j - i - 1);
  }
  Eigen::Index re(Eigen::Index i, Eigen::Index j) const {
    return d + 2 * pair(i, j);
  }
  Eigen::Index im(Eigen::Index i, Eigen::Index j) const {
    return d + 2 * pair(i, j) + 1;
  }
  Eigen::Index size() const { return d * d; }
};

using Triplets = std::vector<Eigen::Triplet<double>>;

// Coefficients of Re/Im Tr[M J] as linear functionals of the sveced block G
// containing B = -J at offset `g_off`, i.e. J(i,j) = -G(i, D/2 + j).
inline void add_measurement_row_on_block(Triplets& t, Eigen::Index row_re,
                                         Eigen::Index row_im,
                                         const ComplexMatrix& m,
                                         const SvecIndex& g, Eigen::Index g_off,
                                         Eigen::Index d, double scale) {
  const double inv_s = scale / std::sqrt(2.0);
  // Tr[M J] = sum_{pq} M(p,q) J(q,p), J(q,p) = -B(q,p) = -G(q, d+p).
  for (Eigen::Index p = 0; p < d; ++p)
    for (Eigen::Index q = 0; q < d; ++q) {
      const Complex mpq = m(p, q);
      const Eigen::Index cre = g.re(q, d + p) + g_off;
      const Eigen::Index cim = g.im(q, d + p) + g_off;
      if (row_re >= 0) {
        if (mpq.real() != 0.0) t.emplace_back(row_re, cre, -mpq.real() * inv_s);
        if (mpq.imag() != 0.0) t.emplace_back(row_re, cim, mpq.imag() * inv_s);
      }
      if (row_im >= 0) {
        if (mpq.imag() != 0.0) t.emplace_back(row_im, cre, -mpq.imag() * inv_s);
        if (mpq.real() != 0.0) t.emplace_back(row_im, cim, -mpq.real() * inv_s);
      }
    }
}

inline ComplexMatrix measurement_operator(const MeasurementSetting& s) {
  return tensor_product(s.observable.matrix(),
                        s.psi.projector().matrix().transpose());
}

}  // namespace detail

/// Reusable SDP formulations of the norm-minimizing estimators. Building one
/// factorizes the constraint system once; re-solving with new data (y, eta)
/// reuses it.
class SdpReconstructor {
 public:
  SdpReconstructor(const MeasurementEnsemble& ensemble, Method method)
      : method_(method), n_(ensemble.n), d_(ensemble.n * ensemble.n),
        m_(ensemble.size()) {
    if (m_ < 1)
      throw std::invalid_argument("reconstruction requires m >= 1 settings");
    meas_.reserve(m_);
    double mean_norm = 0.0;
    for (const auto& s : ensemble.settings) {
      meas_.push_back(detail::measurement_operator(s));
      mean_norm += meas_.back().norm();
    }
    scale_ = double(m_) / mean_norm;  // one global scale; geometry unchanged
    switch (method) {
      case Method::TraceNorm: build_trace_norm(); break;
      case Method::TraceNormConstrained: build_trace_norm_constrained(); break;
      case Method::DiamondNorm: build_diamond_norm(false); break;
      case Method::DiamondNormConstrained: build_diamond_norm(true); break;
      default:
        throw std::invalid_argument("SdpReconstructor: unsupported method");
    }
    problem_.validate();
    problem_.projector();  // factorize now
  }

  ReconstructionResult run(const MeasurementVector& y, double eta,
                           const SolverConfig& cfg = SolverConfig{}) {
    if (y.values.size() != m_)
      throw DimensionError("reconstruction: measurement length mismatch");
    if (eta < 0.0) throw std::invalid_argument("reconstruction: eta < 0");
    const auto t0 = std::chrono::steady_clock::now();
    RealVector rhs = rhs_template_;
    for (Eigen::Index i = 0; i < m_; ++i)
      rhs(meas_row_start_ + row_stride_ * i) = scale_ * y.values(i);
    problem_.set_equality_rhs(std::move(rhs));
    problem_.ball_cones[0].radius = scale_ * eta;
    const SolverResult sol = solve(problem_, cfg);
    const auto t1 = std::chrono::steady_clock::now();

    ReconstructionResult out;
    out.dim = n_;
    out.choi = extract_choi(sol.x);
    out.objective = sol.objective;
    out.status = sol.status;
    out.iterations = sol.iterations;
    out.method = method_;
    out.eta = eta;
    out.residual = residual_of(out.choi, y);
    out.wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    return out;
  }

  double residual_of(const ComplexMatrix& j, const MeasurementVector& y) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const Complex v = (meas_[i] * j).trace() - y.values(i);
      acc += std::norm(v);
    }
    return std::sqrt(acc);
  }

 private:
  // trace norm over all maps: block variable H = [[X, -J], [-J^dagger, Y]]
  // PSD, objective Tr[H]/2, data held in an l2 ball.
  void build_trace_norm() {
    const Eigen::Index bd = 2 * d_;  // block dimension
    g_index_ = detail::SvecIndex{bd};
    const Eigen::Index g_len = g_index_.size();
    w_off_ = g_len;
    const Eigen::Index nw = 2 * m_;
    problem_.num_vars = g_len + nw;
    problem_.objective = RealVector::Zero(problem_.num_vars);
    for (Eigen::Index i = 0; i < bd; ++i)
      problem_.objective(g_index_.diag(i)) = 0.5;
    problem_.psd_cones.push_back({0, bd});
    problem_.ball_cones.push_back({w_off_, nw, RealVector::Zero(nw), 0.0, -1});

    detail::Triplets t;
    meas_row_start_ = 0;
    row_stride_ = 2;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const Eigen::Index row_re = 2 * i, row_im = 2 * i + 1;
      detail::add_measurement_row_on_block(t, row_re, row_im, meas_[i],
                                           g_index_, 0, d_, scale_);
      t.emplace_back(row_re, w_off_ + i, -1.0);
      t.emplace_back(row_im, w_off_ + m_ + i, -1.0);
    }
    finish_equalities(t, 2 * m_);
  }

  // constrained variant: J Hermitian with Tr_1 J = 1 is parameterized as the
  // difference of two PSD blocks, J = X - Y, whose trace sum is the trace
  // norm at the optimum.
  void build_trace_norm_constrained() {
    x_index_ = detail::SvecIndex{d_};
    const Eigen::Index len = x_index_.size();
    y_off_ = len;
    w_off_ = 2 * len;
    problem_.num_vars = 2 * len + m_;
    problem_.objective = RealVector::Zero(problem_.num_vars);
    for (Eigen::Index i = 0; i < d_; ++i) {
      problem_.objective(x_index_.diag(i)) = 1.0;
      problem_.objective(y_off_ + x_index_.diag(i)) = 1.0;
    }
    problem_.psd_cones.push_back({0, d_});
    problem_.psd_cones.push_back({y_off_, d_});
    problem_.ball_cones.push_back(
        {w_off_, m_, RealVector::Zero(m_), 0.0, -1});

    detail::Triplets t;
    Eigen::Index row = 0;
    // Tr_1(X - Y) = 1
    for (Eigen::Index k = 0; k < n_; ++k) {
      for (Eigen::Index a = 0; a < n_; ++a) {
        const Eigen::Index c = x_index_.diag(a * n_ + k);
        t.emplace_back(row, c, 1.0);
        t.emplace_back(row, y_off_ + c, -1.0);
      }
      rhs_entries_.emplace_back(row, 1.0);
      ++row;
      for (Eigen::Index l = k + 1; l < n_; ++l) {
        for (Eigen::Index a = 0; a < n_; ++a) {
          const Eigen::Index cre = x_index_.re(a * n_ + k, a * n_ + l);
          const Eigen::Index cim = x_index_.im(a * n_ + k, a * n_ + l);
          t.emplace_back(row, cre, 1.0);
          t.emplace_back(row, y_off_ + cre, -1.0);
          t.emplace_back(row + 1, cim, 1.0);
          t.emplace_back(row + 1, y_off_ + cim, -1.0);
        }
        row += 2;
      }
    }
    meas_row_start_ = row;
    row_stride_ = 1;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const RealVector a = svec(meas_[i]);
      for (Eigen::Index c = 0; c < len; ++c) {
        if (a(c) == 0.0) continue;
        t.emplace_back(row, c, scale_ * a(c));
        t.emplace_back(row, y_off_ + c, -scale_ * a(c));
      }
      t.emplace_back(row, w_off_ + i, -1.0);
      ++row;
    }
    finish_equalities(t, row);
  }

  // diamond norm objective via epigraph scalars: minimize (s + t)/2 with
  // s 1 - Tr_out X >= 0 and t 1 - Tr_out Y >= 0 as extra PSD blocks.
  void build_diamond_norm(bool constrained) {
    const Eigen::Index bd = 2 * d_;
    g_index_ = detail::SvecIndex{bd};
    const Eigen::Index g_len = g_index_.size();
    s_off_ = g_len;
    t_off_ = g_len + 1;
    zs_off_ = g_len + 2;
    const Eigen::Index z_len = n_ * n_;
    zt_off_ = zs_off_ + z_len;
    w_off_ = zt_off_ + z_len;
    const Eigen::Index nw = constrained ? m_ : 2 * m_;
    problem_.num_vars = w_off_ + nw;
    problem_.objective = RealVector::Zero(problem_.num_vars);
    problem_.objective(s_off_) = 0.5;
    problem_.objective(t_off_) = 0.5;
    problem_.psd_cones.push_back({0, bd});
    problem_.psd_cones.push_back({zs_off_, n_});
    problem_.psd_cones.push_back({zt_off_, n_});
    problem_.ball_cones.push_back({w_off_, nw, RealVector::Zero(nw), 0.0, -1});

    detail::Triplets t;
    Eigen::Index row = 0;
    row = add_epigraph_rows(t, row, /*x_block=*/true, s_off_, zs_off_);
    row = add_epigraph_rows(t, row, /*x_block=*/false, t_off_, zt_off_);
    if (constrained) {
      row = add_hermiticity_rows(t, row);
      row = add_trace_preservation_rows(t, row);
    }
    meas_row_start_ = row;
    row_stride_ = constrained ? 1 : 2;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const Eigen::Index row_re = row;
      const Eigen::Index row_im = constrained ? -1 : row + 1;
      detail::add_measurement_row_on_block(t, row_re, row_im, meas_[i],
                                           g_index_, 0, d_, scale_);
      t.emplace_back(row_re, w_off_ + i, -1.0);
      if (!constrained) t.emplace_back(row_im, w_off_ + m_ + i, -1.0);
      row += row_stride_;
    }
    finish_equalities(t, row);
  }

  // Z + Tr_out(block) - epi * 1 = 0, n^2 real rows per block.
  Eigen::Index add_epigraph_rows(detail::Triplets& t, Eigen::Index row,
                                 bool x_block, Eigen::Index epi_off,
                                 Eigen::Index z_off) {
    const detail::SvecIndex zi{n_};
    const Eigen::Index shift = x_block ? 0 : d_;
    for (Eigen::Index k = 0; k < n_; ++k) {
      for (Eigen::Index a = 0; a < n_; ++a)
        t.emplace_back(row, g_index_.diag(shift + a * n_ + k), 1.0);
      t.emplace_back(row, z_off + zi.diag(k), 1.0);
      t.emplace_back(row, epi_off, -1.0);
      ++row;
      for (Eigen::Index l = k + 1; l < n_; ++l) {
        for (Eigen::Index a = 0; a < n_; ++a) {
          t.emplace_back(row, g_index_.re(shift + a * n_ + k, shift + a * n_ + l),
                         1.0);
          t.emplace_back(row + 1,
                         g_index_.im(shift + a * n_ + k, shift + a * n_ + l),
                         1.0);
        }
        t.emplace_back(row, z_off + zi.re(k, l), 1.0);
        t.emplace_back(row + 1, z_off + zi.im(k, l), 1.0);
        row += 2;
      }
    }
    return row;
  }

  // B(i,j) = conj(B(j,i)) for the off-diagonal block B = -J.
  Eigen::Index add_hermiticity_rows(detail::Triplets& t, Eigen::Index row) {
    for (Eigen::Index i = 0; i < d_; ++i) {
      t.emplace_back(row, g_index_.im(i, d_ + i), 1.0);
      ++row;
      for (Eigen::Index j = i + 1; j < d_; ++j) {
        t.emplace_back(row, g_index_.re(i, d_ + j), 1.0);
        t.emplace_back(row, g_index_.re(j, d_ + i), -1.0);
        ++row;
        t.emplace_back(row, g_index_.im(i, d_ + j), 1.0);
        t.emplace_back(row, g_index_.im(j, d_ + i), 1.0);
        ++row;
      }
    }
    return row;
  }

  // Tr_1 J = 1 expressed on B = -J: sum_a B(a n + k, a n + l) = -delta_kl.
  Eigen::Index add_trace_preservation_rows(detail::Triplets& t,
                                           Eigen::Index row) {
    const double inv_s = 1.0 / std::sqrt(2.0);
    for (Eigen::Index k = 0; k < n_; ++k) {
      for (Eigen::Index l = k; l < n_; ++l) {
        for (Eigen::Index a = 0; a < n_; ++a) {
          const Eigen::Index bi = a * n_ + k;
          const Eigen::Index bj = d_ + a * n_ + l;
          t.emplace_back(row, g_index_.re(bi, bj), inv_s);
          if (l > k) t.emplace_back(row + 1, g_index_.im(bi, bj), inv_s);
        }
        if (l == k) {
          rhs_entries_.emplace_back(row, -1.0);
          ++row;
        } else {
          row += 2;
        }
      }
    }
    return row;
  }

  void finish_equalities(const detail::Triplets& t, Eigen::Index rows) {
    Eigen::SparseMatrix<double> l(rows, problem_.num_vars);
    l.setFromTriplets(t.begin(), t.end());
    problem_.equality_lhs = std::move(l);
    rhs_template_ = RealVector::Zero(rows);
    for (const auto& [r, v] : rhs_entries_) rhs_template_(r) = v;
    problem_.equality_rhs = rhs_template_;
  }

  ComplexMatrix extract_choi(const RealVector& x) const {
    if (method_ == Method::TraceNormConstrained) {
      const ComplexMatrix xm = smat(x.segment(0, d_ * d_), d_);
      const ComplexMatrix ym = smat(x.segment(y_off_, d_ * d_), d_);
      return xm - ym;
    }
    // off-diagonal block of the sveced G variable
    ComplexMatrix j(d_, d_);
    const double inv_s = 1.0 / std::sqrt(2.0);
    for (Eigen::Index i = 0; i < d_; ++i)
      for (Eigen::Index jj = 0; jj < d_; ++jj)
        j(i, jj) = -Complex(x(g_index_.re(i, d_ + jj)) * inv_s,
                            x(g_index_.im(i, d_ + jj)) * inv_s);
    return j;
  }

  Method method_;
  Eigen::Index n_, d_, m_;
  std::vector<ComplexMatrix> meas_;
  double scale_ = 1.0;
  ConicProblem problem_;
  RealVector rhs_template_;
  std::vector<std::pair<Eigen::Index, double>> rhs_entries_;
  detail::SvecIndex g_index_, x_index_;
  Eigen::Index y_off_ = 0, s_off_ = 0, t_off_ = 0, zs_off_ = 0, zt_off_ = 0,
               w_off_ = 0;
  Eigen::Index meas_row_start_ = 0, row_stride_ = 1;
};

struct CptFitConfig {
  long max_iter = 20000;
  double tol = 1e-10;       // relative iterate movement
  long dykstra_max_iter = 500;
  double dykstra_tol = 1e-10;
  long power_iterations = 50;
  bool via_conic_solver = false;  // cross-check path through the SDP machinery
  SolverConfig solver;
};

namespace detail {

/// Dykstra alternation between the PSD cone and an affine set given by a
/// pre-factorized projector; starting from j0 it converges to the projection
/// of j0 onto the intersection.
inline ComplexMatrix dykstra_psd_affine(const ComplexMatrix& j0,
                                        const AffineConstraint& affine,
                                        Eigen::Index d, long max_iter,
                                        double tol) {
  ComplexMatrix x = j0;
  ComplexMatrix p = ComplexMatrix::Zero(d, d);
  ComplexMatrix q = ComplexMatrix::Zero(d, d);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es;
  for (long it = 0; it < max_iter; ++it) {
    es.compute(x + p);
    const RealVector lam = es.eigenvalues().cwiseMax(0.0);
    const ComplexMatrix y1 =
        es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().adjoint();
    p = x + p - y1;
    const ComplexMatrix z = y1 + q;
    const ComplexMatrix x_next = smat(affine.project(svec(z)), d);
    q = z - x_next;
    const double move = (x_next - x).norm();
    x = x_next;
    if (move <= tol * std::max(1.0, x.norm())) break;
  }
  return x;
}

/// Dykstra alternation between the PSD cone and {Tr_1 J = 1}; returns a
/// trace-preserving iterate that is PSD up to the tolerance.
inline ComplexMatrix project_cpt(const ComplexMatrix& j0, Eigen::Index n,
                                 long max_iter, double tol) {
  const Eigen::Index d = n * n;
  const ComplexMatrix id_n = ComplexMatrix::Identity(n, n);
  ComplexMatrix x = j0;
  ComplexMatrix p = ComplexMatrix::Zero(d, d);
  ComplexMatrix q = ComplexMatrix::Zero(d, d);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es;
  for (long it = 0; it < max_iter; ++it) {
    es.compute(x + p);
    const RealVector lam = es.eigenvalues().cwiseMax(0.0);
    const ComplexMatrix y1 =
        es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().adjoint();
    p = x + p - y1;
    const ComplexMatrix z = y1 + q;
    const ComplexMatrix correction =
        tensor_product(id_n, partial_trace_first(z, n, n) - id_n) / double(n);
    const ComplexMatrix x_next = z - correction;
    q = z - x_next;
    const double move = (x_next - x).norm();
    x = x_next;
    if (move <= tol * std::max(1.0, x.norm())) break;
  }
  return x;
}

}  // namespace detail

/// Least-squares fit over the CPT set via accelerated projected gradient
/// (monotone FISTA with restart); the projection is a Dykstra alternation.
inline ReconstructionResult cpt_fit(const MeasurementEnsemble& ensemble,
                                    const MeasurementVector& y,
                                    const CptFitConfig& cfg = CptFitConfig{}) {
  const Eigen::Index n = ensemble.n;
  const Eigen::Index d = n * n;
  const Eigen::Index m = ensemble.size();
  if (m < 1) throw std::invalid_argument("cpt_fit: at least one measurement");
  if (y.values.size() != m)
    throw DimensionError("cpt_fit: measurement length mismatch");
  const auto t0 = std::chrono::steady_clock::now();

  RealMatrix a(m, d * d);
  for (Eigen::Index i = 0; i < m; ++i)
    a.row(i) = svec(detail::measurement_operator(ensemble.settings[i]));

  ReconstructionResult out;
  out.dim = n;
  out.method = Method::CptFit;
  out.eta = 0.0;

  if (cfg.via_conic_solver) {
    // minimize tau s.t. A svec(J) - y inside the tau-ball, J PSD, Tr_1 J = 1
    ConicProblem p;
    const detail::SvecIndex ji{d};
    const Eigen::Index w_off = d * d;
    const Eigen::Index tau = w_off + m;
    p.num_vars = tau + 1;
    p.objective = RealVector::Zero(p.num_vars);
    p.objective(tau) = 1.0;
    p.psd_cones.push_back({0, d});
    p.ball_cones.push_back({w_off, m, RealVector::Zero(m), 0.0, tau});
    detail::Triplets t;
    Eigen::Index row = 0;
    std::vector<std::pair<Eigen::Index, double>> rhs;
    for (Eigen::Index k = 0; k < n; ++k) {
      for (Eigen::Index aa = 0; aa < n; ++aa)
        t.emplace_back(row, ji.diag(aa * n + k), 1.0);
      rhs.emplace_back(row, 1.0);
      ++row;
      for (Eigen::Index l = k + 1; l < n; ++l) {
        for (Eigen::Index aa = 0; aa < n; ++aa) {
          t.emplace_back(row, ji.re(aa * n + k, aa * n + l), 1.0);
          t.emplace_back(row + 1, ji.im(aa * n + k, aa * n + l), 1.0);
        }
        row += 2;
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index c = 0; c < d * d; ++c)
        if (a(i, c) != 0.0) t.emplace_back(row, c, a(i, c));
      t.emplace_back(row, w_off + i, -1.0);
      rhs.emplace_back(row, y.values(i));
      ++row;
    }
    Eigen::SparseMatrix<double> l(row, p.num_vars);
    l.setFromTriplets(t.begin(), t.end());
    p.equality_lhs = std::move(l);
    p.equality_rhs = RealVector::Zero(row);
    for (const auto& [r, v] : rhs) p.equality_rhs(r) = v;
    const SolverResult sol = solve(p, cfg.solver);
    out.choi = smat(sol.x.segment(0, d * d), d);
    out.status = sol.status;
    out.iterations = sol.iterations;
    out.residual = (a * sol.x.segment(0, d * d) - y.values).norm();
    out.objective = out.residual;
    const auto t1 = std::chrono::steady_clock::now();
    out.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return out;
  }

  // Lipschitz constant of the gradient by power iteration on A^T A.
  RealVector pv = RealVector::Ones(d * d).normalized();
  double lip = 1.0;
  for (long it = 0; it < cfg.power_iterations; ++it) {
    pv = a.transpose() * (a * pv);
    const double nrm = pv.norm();
    if (nrm == 0.0) break;
    lip = nrm;
    pv /= nrm;
  }
  const double step = 1.0 / std::max(lip, 1e-30);

  // coarse inner projections while the outer iteration is far from
  // converged, tight ones near the end; the best iterate gets a final
  // tight polish before it is returned
  double dyk_tol = 1e-6;
  auto project = [&](const ComplexMatrix& j) {
    return detail::project_cpt(j, n, cfg.dykstra_max_iter, dyk_tol);
  };
  auto grad_step = [&](const RealVector& v) {
    return RealVector(v - step * (a.transpose() * (a * v - y.values)));
  };

  // start at the maximally mixed channel
  RealVector x = svec(ComplexMatrix::Identity(d, d) / double(n));
  RealVector momentum = x;
  double theta = 1.0;
  RealVector best_x = x;
  double best_res = (a * x - y.values).norm();
  double res_prev = best_res;
  double stall_anchor = best_res;
  long stall_since = 0;
  long it = 1;
  SolveStatus status = SolveStatus::MaxIter;
  for (; it <= cfg.max_iter; ++it) {
    const RealVector x_next = svec(project(smat(grad_step(momentum), d)));
    const double res_next = (a * x_next - y.values).norm();
    const double theta_next =
        0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    if (res_next > res_prev) {
      // residual went up: drop the momentum
      theta = 1.0;
      momentum = x_next;
    } else {
      momentum = x_next + ((theta - 1.0) / theta_next) * (x_next - x);
      theta = theta_next;
    }
    const double move_rel = (x_next - x).norm() / std::max(1.0, x_next.norm());
    x = x_next;
    res_prev = res_next;
    if (res_next < best_res) {
      best_res = res_next;
      best_x = x_next;
    }
    const bool tight = dyk_tol <= 1.01 * cfg.dykstra_tol;
    if (tight && move_rel <= cfg.tol) {
      status = SolveStatus::Optimal;
      break;
    }
    // no measurable residual progress over a long tight stretch
    if (tight && ++stall_since >= 100) {
      if (stall_anchor - best_res <= 1e-10 * std::max(1.0, best_res)) {
        status = SolveStatus::Optimal;
        break;
      }
      stall_anchor = best_res;
      stall_since = 0;
    }
    // apparent stalls may just be projection error; tighten before trusting
    dyk_tol = std::clamp(0.02 * move_rel, cfg.dykstra_tol, 1e-6);
  }

  dyk_tol = cfg.dykstra_tol;
  best_x = svec(project(smat(best_x, d)));
  best_res = (a * best_x - y.values).norm();
  out.choi = smat(best_x, d);
  out.status = status;
  out.iterations = std::min(it, cfg.max_iter);
  out.residual = best_res;
  out.objective = best_res;
  const auto t1 = std::chrono::steady_clock::now();
  out.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return out;
}

inline ReconstructionResult trace_norm_min(const MeasurementEnsemble& ensemble,
                                           const MeasurementVector& y,
                                           double eta, bool constrained,
                                           const SolverConfig& cfg = {}) {
  SdpReconstructor rec(ensemble, constrained ? Method::TraceNormConstrained
                                             : Method::TraceNorm);
  return rec.run(y, eta, cfg);
}

inline ReconstructionResult diamond_norm_min(
    const MeasurementEnsemble& ensemble, const MeasurementVector& y, double eta,
    bool constrained, const SolverConfig& cfg = {}) {
  SdpReconstructor rec(ensemble, constrained ? Method::DiamondNormConstrained
                                             : Method::DiamondNorm);
  return rec.run(y, eta, cfg);
}

/// Diamond norm of a map given by its Choi matrix, as the value of the
/// partial-trace spectral-norm program.
inline double diamond_norm(Eigen::Index n, const ComplexMatrix& choi,
                           const SolverConfig& cfg = SolverConfig{}) {
  const Eigen::Index d = n * n;
  if (choi.rows() != d || choi.cols() != d)
    throw DimensionError("diamond_norm: Choi dimension mismatch");
  const Eigen::Index bd = 2 * d;
  const detail::SvecIndex gi{bd};
  ConicProblem p;
  const Eigen::Index s_off = gi.size();
  const Eigen::Index t_off = s_off + 1;
  const Eigen::Index zs_off = t_off + 1;
  const Eigen::Index zt_off = zs_off + n * n;
  p.num_vars = zt_off + n * n;
  p.objective = RealVector::Zero(p.num_vars);
  p.objective(s_off) = 0.5;
  p.objective(t_off) = 0.5;
  p.psd_cones.push_back({0, bd});
  p.psd_cones.push_back({zs_off, n});
  p.psd_cones.push_back({zt_off, n});

  detail::Triplets t;
  std::vector<std::pair<Eigen::Index, double>> rhs;
  Eigen::Index row = 0;
  const double s2 = std::sqrt(2.0);
  // pin the off-diagonal block to -J
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      t.emplace_back(row, gi.re(i, d + j), 1.0);
      rhs.emplace_back(row, -s2 * choi(i, j).real());
      ++row;
      t.emplace_back(row, gi.im(i, d + j), 1.0);
      rhs.emplace_back(row, -s2 * choi(i, j).imag());
      ++row;
    }
  const detail::SvecIndex zi{n};
  for (int which = 0; which < 2; ++which) {
    const Eigen::Index shift = which == 0 ? 0 : d;
    const Eigen::Index epi = which == 0 ? s_off : t_off;
    const Eigen::Index z_off = which == 0 ? zs_off : zt_off;
    for (Eigen::Index k = 0; k < n; ++k) {
      for (Eigen::Index a2 = 0; a2 < n; ++a2)
        t.emplace_back(row, gi.diag(shift + a2 * n + k), 1.0);
      t.emplace_back(row, z_off + zi.diag(k), 1.0);
      t.emplace_back(row, epi, -1.0);
      ++row;
      for (Eigen::Index l = k + 1; l < n; ++l) {
        for (Eigen::Index a2 = 0; a2 < n; ++a2) {
          t.emplace_back(row, gi.re(shift + a2 * n + k, shift + a2 * n + l), 1.0);
          t.emplace_back(row + 1, gi.im(shift + a2 * n + k, shift + a2 * n + l),
                         1.0);
        }
        t.emplace_back(row, z_off + zi.re(k, l), 1.0);
        t.emplace_back(row + 1, z_off + zi.im(k, l), 1.0);
        row += 2;
      }
    }
  }
  Eigen::SparseMatrix<double> l(row, p.num_vars);
  l.setFromTriplets(t.begin(), t.end());
  p.equality_lhs = std::move(l);
  p.equality_rhs = RealVector::Zero(row);
  for (const auto& [r, v] : rhs) p.equality_rhs(r) = v;
  const SolverResult sol = solve(p, cfg);
  if (sol.status == SolveStatus::Infeasible)
    throw Error("diamond_norm: solver reported infeasibility");
  return sol.objective;
}

inline double diamond_norm(const HermPreservingMap& t,
                           const SolverConfig& cfg = SolverConfig{}) {
  return diamond_norm(t.dim, t.choi.matrix(), cfg);
}

inline double diamond_norm(const QuantumChannel& t,
                           const SolverConfig& cfg = SolverConfig{}) {
  return diamond_norm(t.dim, t.choi.matrix(), cfg);
}

/// Dispatcher used by the experiment harness.
struct ReconstructOptions {
  SolverConfig solver;
  CptFitConfig cpt;
};

inline ReconstructionResult reconstruct(const MeasurementEnsemble& ensemble,
                                        const MeasurementVector& y,
                                        Method method, double eta,
                                        const ReconstructOptions& opt = {}) {
  switch (method) {
    case Method::CptFit: return cpt_fit(ensemble, y, opt.cpt);
    case Method::TraceNorm:
      return trace_norm_min(ensemble, y, eta, false, opt.solver);
    case Method::TraceNormConstrained:
      return trace_norm_min(ensemble, y, eta, true, opt.solver);
    case Method::DiamondNorm:
      return diamond_norm_min(ensemble, y, eta, false, opt.solver);
    case Method::DiamondNormConstrained:
      return diamond_norm_min(ensemble, y, eta, true, opt.solver);
  }
  throw std::invalid_argument("reconstruct: unknown method");
}

}  // namespace qpt

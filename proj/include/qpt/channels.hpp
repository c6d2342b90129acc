#pragma once

#include <utility>
#include <vector>

#include "qpt/linalg.hpp"
#include "qpt/rng.hpp"
#include "qpt/types.hpp"

namespace qpt {

// Choi convention: J(T) = sum_{ij} T(|i><j|) (x) |i><j|, output factor first.
// A trace-preserving map has Tr_1[J(T)] = 1_n; a CPT map additionally has
// J(T) >= 0 and Tr[J(T)] = n.

/// Completely positive trace-preserving map, stored as its Choi matrix.
struct QuantumChannel {
  Eigen::Index dim = 0;     // n; the Choi matrix is n^2 x n^2
  HermitianOperator choi;
};

/// Hermiticity-preserving map (Hermitian Choi matrix, no positivity or trace
/// condition).
struct HermPreservingMap {
  Eigen::Index dim = 0;
  HermitianOperator choi;
};

struct KrausSet {
  Eigen::Index dim = 0;
  std::vector<ComplexMatrix> operators;
};

inline QuantumChannel choi_from_kraus(const KrausSet& k) {
  const Eigen::Index n = k.dim;
  ComplexMatrix j = ComplexMatrix::Zero(n * n, n * n);
  for (const ComplexMatrix& op : k.operators) {
    if (op.rows() != n || op.cols() != n)
      throw DimensionError("choi_from_kraus: operator dimension mismatch");
    const ComplexVector v = rowvec(op);
    j += v * v.adjoint();
  }
  return QuantumChannel{n, HermitianOperator(j)};
}

/// Eigendecomposition of the Choi matrix; eigenvalues below
/// rank_tol * max eigenvalue are discarded.
inline KrausSet kraus_from_choi(const QuantumChannel& t,
                                double rank_tol = 1e-9) {
  const Eigen::Index n = t.dim;
  const HermEig eig = herm_eig(t.choi);
  const double top = eig.eigenvalues.size() ? eig.eigenvalues(0) : 0.0;
  const double cut = rank_tol * std::max(top, 0.0);
  KrausSet out{n, {}};
  for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i) {
    const double lam = eig.eigenvalues(i);
    if (lam < -1e-7 * std::max(top, 1.0))
      throw NotCompletelyPositive(
          "kraus_from_choi: Choi matrix has a significantly negative "
          "eigenvalue " +
          std::to_string(lam));
    if (lam <= cut) continue;
    out.operators.push_back(std::sqrt(lam) *
                            unrowvec(eig.eigenvectors.col(i), n, n));
  }
  return out;
}

namespace detail {

inline ComplexMatrix apply_choi(const ComplexMatrix& choi,
                                const ComplexMatrix& rho, Eigen::Index n) {
  if (rho.rows() != n || rho.cols() != n)
    throw DimensionError("apply: state dimension mismatch");
  // T(rho) = Tr_2[(1 (x) rho^T) J(T)]
  const ComplexMatrix lifted =
      tensor_product(ComplexMatrix::Identity(n, n), rho.transpose()) * choi;
  return partial_trace_second(lifted, n, n);
}

}  // namespace detail

inline HermitianOperator apply(const QuantumChannel& t,
                               const HermitianOperator& rho) {
  return HermitianOperator(detail::apply_choi(t.choi.matrix(), rho.matrix(), t.dim));
}

inline HermitianOperator apply(const HermPreservingMap& t,
                               const HermitianOperator& rho) {
  return HermitianOperator(detail::apply_choi(t.choi.matrix(), rho.matrix(), t.dim));
}

inline QuantumChannel identity_channel(Eigen::Index n) {
  KrausSet k{n, {ComplexMatrix::Identity(n, n)}};
  return choi_from_kraus(k);
}

inline QuantumChannel unitary_channel(const ComplexMatrix& u) {
  if (u.rows() != u.cols())
    throw DimensionError("unitary_channel: matrix must be square");
  KrausSet k{u.rows(), {u}};
  return choi_from_kraus(k);
}

/// T_dep(rho) = Tr(rho) 1/n; the Choi matrix is 1_{n^2}/n.
inline QuantumChannel depolarizing_channel(Eigen::Index n) {
  return QuantumChannel{
      n, HermitianOperator(ComplexMatrix::Identity(n * n, n * n) / double(n))};
}

/// Doubly-controlled NOT on three qubits.
inline QuantumChannel toffoli_channel() {
  ComplexMatrix u = ComplexMatrix::Identity(8, 8);
  u(6, 6) = 0.0;
  u(7, 7) = 0.0;
  u(6, 7) = 1.0;
  u(7, 6) = 1.0;
  return unitary_channel(u);
}

/// Convex combination (1-lambda) T1 + lambda T2 on Choi matrices.
inline QuantumChannel mix(const QuantumChannel& t1, const QuantumChannel& t2,
                          double lambda) {
  if (t1.dim != t2.dim) throw DimensionError("mix: dimension mismatch");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("mix: lambda must be in [0, 1]");
  return QuantumChannel{
      t1.dim, HermitianOperator((1.0 - lambda) * t1.choi.matrix() +
                                lambda * t2.choi.matrix())};
}

/// Uniformly random CPT channel of Kraus rank exactly r: Stinespring
/// isometry V: C^n -> C^n (x) C^r cut from a Haar unitary on C^{n r},
/// T(rho) = Tr_env[V rho V^dagger].
inline QuantumChannel random_rank_r_channel(Eigen::Index n, Eigen::Index r,
                                            Rng& rng) {
  if (r < 1 || r > n * n)
    throw std::invalid_argument("random_rank_r_channel: need 1 <= r <= n^2");
  const ComplexMatrix u = haar_unitary(n * r, rng);
  // Embedding |i> -> |i> (x) |0>; Kraus operator e is (1 (x) <e|) V.
  KrausSet k{n, {}};
  for (Eigen::Index e = 0; e < r; ++e) {
    ComplexMatrix op(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index i = 0; i < n; ++i) op(a, i) = u(a * r + e, i * r);
    k.operators.push_back(std::move(op));
  }
  return choi_from_kraus(k);
}

inline Eigen::Index kraus_rank(const HermitianOperator& choi,
                               double tol = 1e-9) {
  const HermEig eig = herm_eig(choi);
  double top = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i)
    top = std::max(top, std::abs(eig.eigenvalues(i)));
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i)
    if (std::abs(eig.eigenvalues(i)) > tol * top) ++rank;
  return rank;
}

inline Eigen::Index kraus_rank(const QuantumChannel& t, double tol = 1e-9) {
  return kraus_rank(t.choi, tol);
}

/// Split T = T_r + T_c where J(T_r) keeps the r eigen-components of largest
/// magnitude. Ties are broken by eigenvector index (stable order from the
/// descending-eigenvalue decomposition).
inline std::pair<HermPreservingMap, HermPreservingMap> truncate_rank(
    Eigen::Index n, const HermitianOperator& choi, Eigen::Index r) {
  const HermEig eig = herm_eig(choi);
  const Eigen::Index d = choi.dim();
  std::vector<Eigen::Index> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) {
                     return std::abs(eig.eigenvalues(a)) >
                            std::abs(eig.eigenvalues(b));
                   });
  ComplexMatrix kept = ComplexMatrix::Zero(d, d);
  for (Eigen::Index k = 0; k < std::min(r, d); ++k) {
    const Eigen::Index i = order[k];
    kept += eig.eigenvalues(i) * eig.eigenvectors.col(i) *
            eig.eigenvectors.col(i).adjoint();
  }
  HermPreservingMap trunc{n, HermitianOperator(kept)};
  HermPreservingMap tail{n, HermitianOperator(choi.matrix() - kept)};
  return {std::move(trunc), std::move(tail)};
}

inline std::pair<HermPreservingMap, HermPreservingMap> truncate_rank(
    const QuantumChannel& t, Eigen::Index r) {
  return truncate_rank(t.dim, t.choi, r);
}

/// Real parameter count of trace-preserving hermiticity-preserving maps on
/// C^n (and of the CPT set): n^4 - n^2.
inline Eigen::Index cpt_dimension(Eigen::Index n) {
  return n * n * n * n - n * n;
}

}  // namespace qpt

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "qpt/rng.hpp"
#include "qpt/types.hpp"

namespace qpt {

struct HermEig {
  RealVector eigenvalues;     // sorted descending
  ComplexMatrix eigenvectors; // columns, unitary; H = V diag(lambda) V^dagger
};

/// Hermitian eigendecomposition with eigenvalues sorted descending.
inline HermEig herm_eig(const HermitianOperator& h) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h.matrix());
  if (es.info() != Eigen::Success)
    throw EigNotConverged("herm_eig: eigensolver did not converge");
  const Eigen::Index d = h.dim();
  HermEig out;
  out.eigenvalues = es.eigenvalues().reverse();
  out.eigenvectors = ComplexMatrix(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    out.eigenvectors.col(j) = es.eigenvectors().col(d - 1 - j);
  return out;
}

/// Kronecker product, (A (x) B)[(i*p+k),(j*q+l)] = A(i,j) B(k,l) for B p x q.
inline ComplexMatrix tensor_product(const ComplexMatrix& a,
                                    const ComplexMatrix& b) {
  ComplexMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Trace over the first tensor factor of X on C^{d1} (x) C^{d2}.
inline ComplexMatrix partial_trace_first(const ComplexMatrix& x,
                                         Eigen::Index d1, Eigen::Index d2) {
  if (x.rows() != d1 * d2 || x.cols() != d1 * d2)
    throw DimensionError("partial_trace_first: dimension mismatch");
  ComplexMatrix out = ComplexMatrix::Zero(d2, d2);
  for (Eigen::Index a = 0; a < d1; ++a)
    out += x.block(a * d2, a * d2, d2, d2);
  return out;
}

inline HermitianOperator partial_trace_first(const HermitianOperator& x,
                                             Eigen::Index d1,
                                             Eigen::Index d2) {
  return HermitianOperator(partial_trace_first(x.matrix(), d1, d2));
}

/// Trace over the second tensor factor.
inline ComplexMatrix partial_trace_second(const ComplexMatrix& x,
                                          Eigen::Index d1, Eigen::Index d2) {
  if (x.rows() != d1 * d2 || x.cols() != d1 * d2)
    throw DimensionError("partial_trace_second: dimension mismatch");
  ComplexMatrix out = ComplexMatrix::Zero(d1, d1);
  for (Eigen::Index i = 0; i < d1; ++i)
    for (Eigen::Index j = 0; j < d1; ++j) {
      Complex s = 0.0;
      for (Eigen::Index k = 0; k < d2; ++k) s += x(i * d2 + k, j * d2 + k);
      out(i, j) = s;
    }
  return out;
}

inline HermitianOperator partial_trace_second(const HermitianOperator& x,
                                              Eigen::Index d1,
                                              Eigen::Index d2) {
  return HermitianOperator(partial_trace_second(x.matrix(), d1, d2));
}

/// Schatten p-norm (l_p norm of the singular values). p = 2 avoids the SVD.
inline double schatten_norm(const ComplexMatrix& a, double p) {
  if (p < 1.0) throw std::invalid_argument("schatten_norm: p must be >= 1");
  if (p == 2.0) return a.norm();
  Eigen::JacobiSVD<ComplexMatrix> svd(a);
  const RealVector& sv = svd.singularValues();
  if (std::isinf(p)) return sv.size() ? sv(0) : 0.0;
  if (p == 1.0) return sv.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) acc += std::pow(sv(i), p);
  return std::pow(acc, 1.0 / p);
}

/// Haar-distributed unitary: QR of a complex Gaussian matrix with the R
/// diagonal phases absorbed into Q, which makes the factorization unique and
/// the distribution exactly invariant.
inline ComplexMatrix haar_unitary(Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("haar_unitary: n must be >= 1");
  ComplexMatrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.cgaussian();
  Eigen::HouseholderQR<ComplexMatrix> qr(g);
  ComplexMatrix q = qr.householderQ();
  ComplexMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    const Complex rjj = r(j, j);
    const double mag = std::abs(rjj);
    const Complex phase = mag > 0.0 ? rjj / mag : Complex(1.0, 0.0);
    q.col(j) *= phase;
  }
  return q;
}

/// Haar-distributed unit vector.
inline StateVector haar_state(Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("haar_state: n must be >= 1");
  ComplexVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.cgaussian();
  return StateVector(std::move(v));
}

/// Flip (swap) operator F on C^n (x) C^n: F (u (x) v) = v (x) u.
inline HermitianOperator flip_operator(Eigen::Index n) {
  ComplexMatrix f = ComplexMatrix::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) f(j * n + i, i * n + j) = 1.0;
  return HermitianOperator(f);
}

/// Representation of a permutation of k tensor slots on (C^n)^(x)k:
/// R(sigma) |i_1,...,i_k> = |i_{sigma(1)},...,i_{sigma(k)}> with
/// sigma(s) = perm[s].
inline ComplexMatrix permutation_operator(const std::vector<int>& perm,
                                          Eigen::Index n) {
  const int k = static_cast<int>(perm.size());
  Eigen::Index dim = 1;
  for (int s = 0; s < k; ++s) dim *= n;
  ComplexMatrix r = ComplexMatrix::Zero(dim, dim);
  std::vector<Eigen::Index> idx(k);
  for (Eigen::Index col = 0; col < dim; ++col) {
    Eigen::Index rest = col;
    for (int s = k - 1; s >= 0; --s) {
      idx[s] = rest % n;
      rest /= n;
    }
    Eigen::Index row = 0;
    for (int s = 0; s < k; ++s) row = row * n + idx[perm[s]];
    r(row, col) = 1.0;
  }
  return r;
}

namespace detail {

inline void all_permutations(int k, std::vector<std::vector<int>>& out) {
  std::vector<int> p(k);
  std::iota(p.begin(), p.end(), 0);
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
}

}  // namespace detail

/// Projector onto the fully symmetric subspace of (C^n)^(x)k, k in {2, 4}.
inline HermitianOperator sym_projector(int k, Eigen::Index n) {
  if (k == 2) {
    const ComplexMatrix id = ComplexMatrix::Identity(n * n, n * n);
    return HermitianOperator(0.5 * (id + flip_operator(n).matrix()));
  }
  if (k == 4) {
    std::vector<std::vector<int>> perms;
    detail::all_permutations(4, perms);
    ComplexMatrix acc = ComplexMatrix::Zero(n * n * n * n, n * n * n * n);
    for (const auto& p : perms) acc += permutation_operator(p, n);
    return HermitianOperator(acc / 24.0);
  }
  throw std::invalid_argument("sym_projector: k must be 2 or 4");
}

}  // namespace qpt

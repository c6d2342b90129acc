#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace qpt {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NotCompletelyPositive : public Error {
 public:
  using Error::Error;
};

class NotAState : public Error {
 public:
  using Error::Error;
};

class EigNotConverged : public Error {
 public:
  using Error::Error;
};

/// Dense Hermitian operator. Construction symmetrizes, so H == H^dagger holds
/// exactly afterwards; callers are expected to pass matrices that are already
/// Hermitian up to rounding.
class HermitianOperator {
 public:
  HermitianOperator() = default;

  explicit HermitianOperator(const ComplexMatrix& m) {
    if (m.rows() != m.cols())
      throw DimensionError("HermitianOperator: matrix must be square");
    mat_ = 0.5 * (m + m.adjoint());
  }

  Eigen::Index dim() const { return mat_.rows(); }
  const ComplexMatrix& matrix() const { return mat_; }

  static HermitianOperator identity(Eigen::Index n) {
    return HermitianOperator(ComplexMatrix::Identity(n, n));
  }
  static HermitianOperator zero(Eigen::Index n) {
    return HermitianOperator(ComplexMatrix::Zero(n, n));
  }

 private:
  ComplexMatrix mat_;
};

/// Normalized pure state. Construction rescales to unit l2 norm.
class StateVector {
 public:
  StateVector() = default;

  explicit StateVector(ComplexVector a) : amp_(std::move(a)) {
    const double nrm = amp_.norm();
    if (!(nrm > 0.0) || !std::isfinite(nrm))
      throw NotAState("StateVector: amplitudes must have positive finite norm");
    amp_ /= nrm;
  }

  Eigen::Index dim() const { return amp_.size(); }
  const ComplexVector& amplitudes() const { return amp_; }

  /// |psi><psi|
  HermitianOperator projector() const {
    return HermitianOperator(amp_ * amp_.adjoint());
  }

  static StateVector basis_state(Eigen::Index n, Eigen::Index k) {
    ComplexVector v = ComplexVector::Zero(n);
    v(k) = 1.0;
    return StateVector(std::move(v));
  }

 private:
  ComplexVector amp_;
};

// Isometric real vectorization of a Hermitian d x d matrix: d diagonal
// entries followed by (sqrt2*Re, sqrt2*Im) of the strict upper triangle in
// row-major pair order. <svec(A), svec(B)> = Tr[A B].
inline RealVector svec(const ComplexMatrix& h) {
  const Eigen::Index d = h.rows();
  RealVector v(d * d);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) v(k++) = h(i, i).real();
  const double s = std::sqrt(2.0);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j) {
      v(k++) = s * h(i, j).real();
      v(k++) = s * h(i, j).imag();
    }
  return v;
}

inline ComplexMatrix smat(const Eigen::Ref<const RealVector>& v, Eigen::Index d) {
  ComplexMatrix h(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) h(i, i) = v(k++);
  const double s = 1.0 / std::sqrt(2.0);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j) {
      const double re = v(k++) * s;
      const double im = v(k++) * s;
      h(i, j) = Complex(re, im);
      h(j, i) = Complex(re, -im);
    }
  return h;
}

// Row-major vectorization of a square matrix; matches the Kronecker
// convention used throughout (vec(K)[a*n+i] = K(a,i)), so a Choi matrix of a
// Kraus operator K is vec(K) vec(K)^dagger.
inline ComplexVector rowvec(const ComplexMatrix& k) {
  const Eigen::Index r = k.rows(), c = k.cols();
  ComplexVector v(r * c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) v(i * c + j) = k(i, j);
  return v;
}

inline ComplexMatrix unrowvec(const Eigen::Ref<const ComplexVector>& v,
                              Eigen::Index rows, Eigen::Index cols) {
  ComplexMatrix k(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) k(i, j) = v(i * cols + j);
  return k;
}

}  // namespace qpt

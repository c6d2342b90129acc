#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "qpt/channels.hpp"
#include "qpt/linalg.hpp"
#include "qpt/rng.hpp"
#include "qpt/types.hpp"

namespace qpt {

struct MeasurementSetting {
  StateVector psi;
  HermitianOperator observable;
};

enum class EnsembleKind { Generic, Pauli, Circuit };

inline std::string to_string(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::Generic: return "generic";
    case EnsembleKind::Pauli: return "pauli";
    case EnsembleKind::Circuit: return "circuit";
  }
  return "?";
}

struct MeasurementEnsemble {
  Eigen::Index n = 0;
  std::vector<MeasurementSetting> settings;
  EnsembleKind kind = EnsembleKind::Generic;
  HermitianOperator base_observable;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(settings.size()); }

  /// The first m settings, as drawn (prefix reuse for uniform-recovery runs).
  MeasurementEnsemble prefix(Eigen::Index m) const {
    MeasurementEnsemble out = *this;
    if (m < static_cast<Eigen::Index>(settings.size()))
      out.settings.resize(m);
    return out;
  }
};

struct MeasurementVector {
  RealVector values;
  double noise_strength = 0.0;  // l2 norm of the injected noise, 0 if none
};

/// Diagonal observable with rank_a eigenvalues evenly spaced over [-1, 1]
/// (ascending), remaining entries zero. rank_a = 1 gives the single value -1.
inline HermitianOperator default_A0(Eigen::Index n, Eigen::Index rank_a) {
  if (rank_a < 1 || rank_a > n)
    throw std::invalid_argument("default_A0: need 1 <= rank_a <= n");
  ComplexMatrix a = ComplexMatrix::Zero(n, n);
  for (Eigen::Index k = 0; k < rank_a; ++k)
    a(k, k) = rank_a == 1
                  ? -1.0
                  : -1.0 + 2.0 * double(k) / double(rank_a - 1);
  return HermitianOperator(a);
}

/// psi_i i.i.d. Haar states, A_i = U_i A0 U_i^dagger with U_i i.i.d. Haar.
inline MeasurementEnsemble gen_generic_ensemble(Eigen::Index n, Eigen::Index m,
                                                const HermitianOperator& a0,
                                                Rng& rng,
                                                std::uint64_t seed_tag = 0) {
  if (m < 1) throw std::invalid_argument("gen_generic_ensemble: m must be >= 1");
  if (a0.dim() != n)
    throw DimensionError("gen_generic_ensemble: observable dimension mismatch");
  MeasurementEnsemble e;
  e.n = n;
  e.kind = EnsembleKind::Generic;
  e.base_observable = a0;
  e.seed = seed_tag;
  e.settings.reserve(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    StateVector psi = haar_state(n, rng);
    const ComplexMatrix u = haar_unitary(n, rng);
    HermitianOperator a(u * a0.matrix() * u.adjoint());
    e.settings.push_back({std::move(psi), std::move(a)});
  }
  return e;
}

namespace detail {

inline const std::array<ComplexMatrix, 4>& pauli_matrices() {
  static const std::array<ComplexMatrix, 4> p = [] {
    std::array<ComplexMatrix, 4> m;
    m[0] = ComplexMatrix::Identity(2, 2);
    m[1] = ComplexMatrix{{Complex(0, 0), Complex(1, 0)},
                         {Complex(1, 0), Complex(0, 0)}};
    m[2] = ComplexMatrix{{Complex(0, 0), Complex(0, -1)},
                         {Complex(0, 1), Complex(0, 0)}};
    m[3] = ComplexMatrix{{Complex(1, 0), Complex(0, 0)},
                         {Complex(0, 0), Complex(-1, 0)}};
    return m;
  }();
  return p;
}

/// The six single-qubit Pauli eigenstates, ordered (x+, x-, y+, y-, z+, z-).
inline const std::array<ComplexVector, 6>& pauli_eigenstates() {
  static const std::array<ComplexVector, 6> s = [] {
    std::array<ComplexVector, 6> v;
    const double r = 1.0 / std::sqrt(2.0);
    v[0] = ComplexVector{{Complex(r, 0), Complex(r, 0)}};
    v[1] = ComplexVector{{Complex(r, 0), Complex(-r, 0)}};
    v[2] = ComplexVector{{Complex(r, 0), Complex(0, r)}};
    v[3] = ComplexVector{{Complex(r, 0), Complex(0, -r)}};
    v[4] = ComplexVector{{Complex(1, 0), Complex(0, 0)}};
    v[5] = ComplexVector{{Complex(0, 0), Complex(1, 0)}};
    return v;
  }();
  return s;
}

}  // namespace detail

/// Observables are uniform Pauli strings (identity factors allowed); input
/// states are products of uniformly drawn eigenvectors of single-qubit
/// sigma_x, sigma_y, sigma_z.
inline MeasurementEnsemble gen_pauli_ensemble(int num_qubits, Eigen::Index m,
                                              Rng& rng,
                                              std::uint64_t seed_tag = 0) {
  if (num_qubits < 1)
    throw std::invalid_argument("gen_pauli_ensemble: need at least one qubit");
  if (m < 1) throw std::invalid_argument("gen_pauli_ensemble: m must be >= 1");
  const Eigen::Index n = Eigen::Index(1) << num_qubits;
  MeasurementEnsemble e;
  e.n = n;
  e.kind = EnsembleKind::Pauli;
  e.seed = seed_tag;
  e.settings.reserve(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    ComplexMatrix p = ComplexMatrix::Identity(1, 1);
    for (int q = 0; q < num_qubits; ++q)
      p = tensor_product(p, detail::pauli_matrices()[rng.integer(4)]);
    ComplexVector psi = ComplexVector::Ones(1);
    for (int q = 0; q < num_qubits; ++q) {
      const ComplexVector& s = detail::pauli_eigenstates()[rng.integer(6)];
      ComplexVector next(psi.size() * 2);
      for (Eigen::Index a = 0; a < psi.size(); ++a)
        for (Eigen::Index b = 0; b < 2; ++b) next(a * 2 + b) = psi(a) * s(b);
      psi = std::move(next);
    }
    e.settings.push_back({StateVector(std::move(psi)), HermitianOperator(p)});
  }
  if (!e.settings.empty()) e.base_observable = e.settings.front().observable;
  return e;
}

namespace detail {

/// Brickwork circuit of Haar two-qubit gates (single-qubit Haar for L = 1).
inline ComplexMatrix brickwork_unitary(int num_qubits, int depth, Rng& rng) {
  const Eigen::Index n = Eigen::Index(1) << num_qubits;
  ComplexMatrix u = ComplexMatrix::Identity(n, n);
  for (int layer = 0; layer < depth; ++layer) {
    if (num_qubits == 1) {
      u = haar_unitary(2, rng) * u;
      continue;
    }
    ComplexMatrix step = ComplexMatrix::Identity(1, 1);
    int q = 0;
    const int start = layer % 2;
    if (start == 1) {
      step = tensor_product(step, haar_unitary(2, rng));
      q = 1;
    }
    while (q + 1 < num_qubits) {
      step = tensor_product(step, haar_unitary(4, rng));
      q += 2;
    }
    while (q < num_qubits) {
      step = tensor_product(step, ComplexMatrix::Identity(2, 2));
      ++q;
    }
    u = step * u;
  }
  return u;
}

}  // namespace detail

/// Approximate-design ensemble from random brickwork circuits: A_i conjugates
/// a0 by a depth-layer circuit, psi_i applies an independent circuit to
/// |0...0>.
inline MeasurementEnsemble gen_circuit_ensemble(Eigen::Index n, Eigen::Index m,
                                                int depth,
                                                const HermitianOperator& a0,
                                                Rng& rng,
                                                std::uint64_t seed_tag = 0) {
  int num_qubits = 0;
  while ((Eigen::Index(1) << num_qubits) < n) ++num_qubits;
  if ((Eigen::Index(1) << num_qubits) != n)
    throw std::invalid_argument("gen_circuit_ensemble: n must be a power of two");
  if (depth < 1)
    throw std::invalid_argument("gen_circuit_ensemble: depth must be >= 1");
  if (m < 1) throw std::invalid_argument("gen_circuit_ensemble: m must be >= 1");
  MeasurementEnsemble e;
  e.n = n;
  e.kind = EnsembleKind::Circuit;
  e.base_observable = a0;
  e.seed = seed_tag;
  e.settings.reserve(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const ComplexMatrix u = detail::brickwork_unitary(num_qubits, depth, rng);
    const ComplexMatrix up = detail::brickwork_unitary(num_qubits, depth, rng);
    ComplexVector zero = ComplexVector::Zero(n);
    zero(0) = 1.0;
    e.settings.push_back({StateVector(up * zero),
                          HermitianOperator(u * a0.matrix() * u.adjoint())});
  }
  return e;
}

inline MeasurementEnsemble gen_circuit_ensemble(Eigen::Index n, Eigen::Index m,
                                                int depth, Rng& rng,
                                                std::uint64_t seed_tag = 0) {
  return gen_circuit_ensemble(n, m, depth, default_A0(n, n), rng, seed_tag);
}

/// y_i = Tr[A_i T(|psi_i><psi_i|)].
template <typename MapType>
inline MeasurementVector measure(const MapType& t,
                                 const MeasurementEnsemble& e) {
  if (t.dim != e.n) throw DimensionError("measure: dimension mismatch");
  MeasurementVector y;
  y.values.resize(e.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const HermitianOperator out = apply(t, e.settings[i].psi.projector());
    const Complex v =
        (e.settings[i].observable.matrix() * out.matrix()).trace();
    y.values(i) = v.real();  // imaginary residue is rounding noise
  }
  y.noise_strength = 0.0;
  return y;
}

/// Adds i.i.d. zero-mean Gaussian noise rescaled so that the injected vector
/// has l2 norm exactly `strength`.
inline MeasurementVector add_noise(const MeasurementVector& y, double strength,
                                   Rng& rng) {
  if (strength < 0.0)
    throw std::invalid_argument("add_noise: strength must be >= 0");
  MeasurementVector out = y;
  if (strength == 0.0 || y.values.size() == 0) return out;
  RealVector e(y.values.size());
  double nrm = 0.0;
  while (nrm == 0.0) {
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = rng.gaussian();
    nrm = e.norm();
  }
  e *= strength / nrm;
  out.values += e;
  out.noise_strength = strength;
  return out;
}

/// Estimates Tr[A T(|psi><psi|)] from `shots` Born-rule samples in the
/// eigenbasis of the observable.
inline double sample_expectation(const QuantumChannel& t,
                                 const MeasurementSetting& s, long shots,
                                 Rng& rng) {
  if (shots < 1)
    throw std::invalid_argument("sample_expectation: shots must be >= 1");
  const HermitianOperator out = apply(t, s.psi.projector());
  const HermEig eig = herm_eig(s.observable);
  const Eigen::Index n = s.observable.dim();
  RealVector p(n);
  double total = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const Complex pk =
        eig.eigenvectors.col(k).adjoint() * out.matrix() * eig.eigenvectors.col(k);
    double prob = pk.real();
    if (prob < -1e-8 || prob > 1.0 + 1e-8)
      throw NotAState("sample_expectation: outcome probability " +
                      std::to_string(prob) + " outside [0, 1]");
    prob = std::min(std::max(prob, 0.0), 1.0);
    p(k) = prob;
    total += prob;
  }
  p /= total;
  RealVector counts = RealVector::Zero(n);
  for (long shot = 0; shot < shots; ++shot) {
    double u = rng.uniform();
    Eigen::Index k = 0;
    while (k + 1 < n && u >= p(k)) {
      u -= p(k);
      ++k;
    }
    counts(k) += 1.0;
  }
  double est = 0.0;
  for (Eigen::Index k = 0; k < n; ++k)
    est += (counts(k) / double(shots)) * eig.eigenvalues(k);
  return est;
}

/// Relative spectral-norm deviation of the empirical k-th moment of a state
/// sampler from the Haar moment (1/n for k = 1, the normalized symmetric
/// projector for k = 2).
inline double design_deviation(const std::function<StateVector(Rng&)>& sampler,
                               int k, Eigen::Index n, long samples, Rng& rng) {
  if (k != 1 && k != 2)
    throw std::invalid_argument("design_deviation: k must be 1 or 2");
  const Eigen::Index dim = k == 1 ? n : n * n;
  ComplexMatrix mean = ComplexMatrix::Zero(dim, dim);
  for (long s = 0; s < samples; ++s) {
    const StateVector psi = sampler(rng);
    const ComplexMatrix proj = psi.projector().matrix();
    mean += k == 1 ? proj : tensor_product(proj, proj);
  }
  mean /= double(samples);
  ComplexMatrix haar;
  if (k == 1) {
    haar = ComplexMatrix::Identity(n, n) / double(n);
  } else {
    haar = sym_projector(2, n).matrix() * (2.0 / (double(n) * double(n + 1)));
  }
  return schatten_norm(mean - haar, std::numeric_limits<double>::infinity()) /
         schatten_norm(haar, std::numeric_limits<double>::infinity());
}

/// Same for a unitary sampler acting on a fixed observable: empirical
/// E[(U a0 U^dagger)^(x)k] against the analytic Haar average.
inline double design_deviation(
    const std::function<ComplexMatrix(Rng&)>& sampler,
    const HermitianOperator& a0, int k, Eigen::Index n, long samples,
    Rng& rng) {
  if (k != 1 && k != 2)
    throw std::invalid_argument("design_deviation: k must be 1 or 2");
  const Eigen::Index dim = k == 1 ? n : n * n;
  ComplexMatrix mean = ComplexMatrix::Zero(dim, dim);
  for (long s = 0; s < samples; ++s) {
    const ComplexMatrix u = sampler(rng);
    const ComplexMatrix a = u * a0.matrix() * u.adjoint();
    mean += k == 1 ? a : tensor_product(a, a);
  }
  mean /= double(samples);
  ComplexMatrix haar;
  if (k == 1) {
    haar = ComplexMatrix::Identity(n, n) *
           (a0.matrix().trace().real() / double(n));
  } else {
    const double tr = a0.matrix().trace().real();
    const double fro2 = a0.matrix().squaredNorm();
    const ComplexMatrix psym = sym_projector(2, n).matrix();
    const ComplexMatrix pasym =
        ComplexMatrix::Identity(n * n, n * n) - psym;
    haar = (tr * tr + fro2) / (double(n) * double(n + 1)) * psym +
           (tr * tr - fro2) / (double(n) * double(n - 1)) * pasym;
  }
  // traceless a0 at k = 1 has a vanishing Haar moment; fall back to the
  // observable's own scale so the deviation stays meaningful
  const double scale = std::pow(
      schatten_norm(a0.matrix(), std::numeric_limits<double>::infinity()), k);
  double denom = schatten_norm(haar, std::numeric_limits<double>::infinity());
  if (denom < 1e-12 * scale) denom = scale;
  const double dev =
      schatten_norm(mean - haar, std::numeric_limits<double>::infinity());
  return dev / denom;
}

}  // namespace qpt

#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "qpt/channels.hpp"
#include "qpt/linalg.hpp"
#include "qpt/measurements.hpp"
#include "qpt/rng.hpp"
#include "qpt/types.hpp"

namespace qpt {

// ---------------------------------------------------------------------------
// Symmetric-group S4 machinery on (C^n)^(x)4

struct S4ProjectorSet {
  Eigen::Index n = 0;
  std::array<HermitianOperator, 5> projectors;  // central isotypic projections
  std::array<double, 5> dims{};                 // Tr P_i
};

namespace detail {

inline int cycle_type_class(const std::vector<int>& perm) {
  // classes ordered: 0 identity, 1 double transpositions, 2 transpositions,
  // 3 four-cycles, 4 three-cycles
  std::array<int, 5> cycles{};  // count of cycles by length 1..4
  std::array<bool, 4> seen{};
  for (int s = 0; s < 4; ++s) {
    if (seen[s]) continue;
    int len = 0, cur = s;
    while (!seen[cur]) {
      seen[cur] = true;
      cur = perm[cur];
      ++len;
    }
    ++cycles[len];
  }
  if (cycles[1] == 4) return 0;
  if (cycles[2] == 2) return 1;
  if (cycles[2] == 1 && cycles[1] == 2) return 2;
  if (cycles[4] == 1) return 3;
  return 4;  // single 3-cycle
}

/// Dimension of the lambda-isotypic component of (C^n)^(x)4: multiplicity of
/// the S4 irrep times the dimension of the matching unitary-group irrep.
inline std::array<double, 5> s4_isotypic_dims(Eigen::Index n) {
  const double nd = double(n);
  const double s1 = nd * (nd + 1) * (nd + 2) * (nd + 3) / 24.0;
  const double s2 = (nd - 3) * (nd - 2) * (nd - 1) * nd / 24.0;
  const double s3 = (nd - 1) * nd * nd * (nd + 1) / 12.0;
  const double s4 = (nd - 1) * nd * (nd + 1) * (nd + 2) / 8.0;
  const double s5 = (nd - 2) * (nd - 1) * nd * (nd + 1) / 8.0;
  return {s1, s2, 2.0 * s3, 3.0 * s4, 3.0 * s5};
}

}  // namespace detail

/// The five central minimal projections of the S4 group algebra represented
/// on (C^n)^(x)4, built from class sums of permutation operators.
inline S4ProjectorSet s4_projectors(Eigen::Index n) {
  if (n < 2 || n > 4)
    throw std::invalid_argument("s4_projectors: supported range is 2 <= n <= 4");
  std::vector<std::vector<int>> perms;
  detail::all_permutations(4, perms);
  const Eigen::Index dim = n * n * n * n;
  // class sums: identity, 2^2, 2^1, 4^1, 3^1
  std::array<ComplexMatrix, 5> sums;
  sums.fill(ComplexMatrix::Zero(dim, dim));
  for (const auto& p : perms)
    sums[detail::cycle_type_class(p)] += permutation_operator(p, n);

  // characters (chi_i on the classes) weighted by d_i/|S4|
  constexpr double c1[5] = {1, 1, 1, 1, 1};
  constexpr double c2[5] = {1, 1, -1, -1, 1};
  constexpr double c3[5] = {2, 2, 0, 0, -1};
  constexpr double c4[5] = {3, -1, 1, -1, 0};
  constexpr double c5[5] = {3, -1, -1, 1, 0};
  const double* chi[5] = {c1, c2, c3, c4, c5};
  const double degree[5] = {1, 1, 2, 3, 3};

  S4ProjectorSet out;
  out.n = n;
  out.dims = detail::s4_isotypic_dims(n);
  for (int i = 0; i < 5; ++i) {
    ComplexMatrix p = ComplexMatrix::Zero(dim, dim);
    for (int c = 0; c < 5; ++c) p += chi[i][c] * sums[c];
    out.projectors[i] = HermitianOperator(p * (degree[i] / 24.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analytic Haar moments

/// E[(|psi><psi|)^(x)k] for k in {1, 2, 4}.
inline HermitianOperator psi_moment_analytic(int k, Eigen::Index n) {
  if (k == 1)
    return HermitianOperator(ComplexMatrix::Identity(n, n) / double(n));
  if (k == 2) {
    const double c = 2.0 / (double(n) * double(n + 1));
    return HermitianOperator(sym_projector(2, n).matrix() * c);
  }
  if (k == 4) {
    const double d1 =
        double(n) * double(n + 1) * double(n + 2) * double(n + 3) / 24.0;
    return HermitianOperator(sym_projector(4, n).matrix() / d1);
  }
  throw std::invalid_argument("psi_moment_analytic: k must be 1, 2, or 4");
}

/// E[(U A U^dagger)^(x)2] over Haar unitaries.
inline HermitianOperator u_moment2_analytic(const HermitianOperator& a) {
  const Eigen::Index n = a.dim();
  const double tr = a.matrix().trace().real();
  const double fro2 = a.matrix().squaredNorm();
  const ComplexMatrix psym = sym_projector(2, n).matrix();
  const ComplexMatrix pasym = ComplexMatrix::Identity(n * n, n * n) - psym;
  return HermitianOperator(
      (tr * tr + fro2) / (double(n) * double(n + 1)) * psym +
      (tr * tr - fro2) / (double(n) * double(n - 1)) * pasym);
}

namespace detail {

inline void require_trace_annihilating(const HermPreservingMap& m,
                                       double tol = 1e-9) {
  const ComplexMatrix tr1 =
      partial_trace_first(m.choi.matrix(), m.dim, m.dim);
  const double scale = std::max(1.0, m.choi.matrix().norm());
  if (tr1.norm() > tol * scale)
    throw std::invalid_argument(
        "map is not trace-annihilating (Tr_1 of its Choi matrix is nonzero)");
}

}  // namespace detail

/// E|S|^2 for S = Tr[U A U^dagger M(|psi><psi|)] with U, psi independent
/// Haar draws and M trace-annihilating. Assembled from the exact second
/// moments of U A U^dagger and |psi><psi| via the swap-trick contractions
/// Tr[F M(1)(x)M(1)] and Tr[F (M(x)M)(F)]; Monte Carlo pins the constant.
inline double moment2_analytic(const HermitianOperator& a,
                               const HermPreservingMap& m) {
  if (a.dim() != m.dim) throw DimensionError("moment2_analytic: dims differ");
  detail::require_trace_annihilating(m);
  const double n = double(a.dim());
  const double fro2 = a.matrix().squaredNorm();
  const double tr = a.matrix().trace().real();
  const ComplexMatrix m_of_id =
      apply(m, HermitianOperator::identity(m.dim)).matrix();
  const double factor = m_of_id.squaredNorm() + m.choi.matrix().squaredNorm();
  return (fro2 * n - tr * tr) /
         ((n - 1.0) * n * n * (n + 1.0) * (n + 1.0)) * factor;
}

struct Moment4Bound {
  double structural_factor = 0.0;  // dimensional factor multiplying c3
  double c3 = 1.0;                 // unknown absolute constant, reported at 1
  double bound() const { return c3 * structural_factor; }
};

/// Upper-bound envelope for E|S|^4 (up to the absolute constant).
/// Requires a traceless, spectral-norm-one observable.
inline Moment4Bound moment4_bound(const HermitianOperator& a,
                                  const HermPreservingMap& m) {
  if (a.dim() != m.dim) throw DimensionError("moment4_bound: dims differ");
  detail::require_trace_annihilating(m);
  const double tr = std::abs(a.matrix().trace().real());
  if (tr > 1e-9 * std::max(1.0, a.matrix().norm()))
    throw std::invalid_argument("moment4_bound: observable must be traceless");
  const double snorm = schatten_norm(a.matrix(), std::numeric_limits<double>::infinity());
  if (std::abs(snorm - 1.0) > 1e-9)
    throw std::invalid_argument(
        "moment4_bound: observable must have unit spectral norm");
  const double n = double(a.dim());
  const double fro4 = std::pow(a.matrix().squaredNorm(), 2);
  const ComplexMatrix m_of_id =
      apply(m, HermitianOperator::identity(m.dim)).matrix();
  const double factor =
      std::pow(m_of_id.squaredNorm() + m.choi.matrix().squaredNorm(), 2);
  Moment4Bound out;
  out.structural_factor =
      fro4 * factor /
      ((n - 1) * (n - 1) * n * n * (n + 1) * (n + 1) * (n + 2) * (n + 3));
  return out;
}

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  long samples = 0;
};

/// Monte Carlo moment E|S|^power over Haar (U, psi) draws.
inline McEstimate moment_mc(const HermitianOperator& a,
                            const HermPreservingMap& m, int power,
                            long samples, Rng& rng) {
  if (a.dim() != m.dim) throw DimensionError("moment_mc: dims differ");
  const Eigen::Index n = a.dim();
  double acc = 0.0, acc2 = 0.0;
  for (long s = 0; s < samples; ++s) {
    const ComplexMatrix u = haar_unitary(n, rng);
    const StateVector psi = haar_state(n, rng);
    const ComplexMatrix out = apply(m, psi.projector()).matrix();
    const Complex sval = (u * a.matrix() * u.adjoint() * out).trace();
    const double v = std::pow(std::abs(sval), power);
    acc += v;
    acc2 += v * v;
  }
  McEstimate e;
  e.samples = samples;
  e.mean = acc / double(samples);
  const double var =
      std::max(0.0, acc2 / double(samples) - e.mean * e.mean);
  e.std_error = std::sqrt(var / double(samples));
  return e;
}

inline double moment4_mc(const HermitianOperator& a, const HermPreservingMap& m,
                         long samples, Rng& rng) {
  return moment_mc(a, m, 4, samples, rng).mean;
}

namespace detail {

/// Applies the map with the given Choi matrix to one tensor slot of an
/// operator on (C^n)^(x)k.
inline ComplexMatrix apply_to_slot(const ComplexMatrix& x,
                                   const ComplexMatrix& choi, Eigen::Index n,
                                   int slot, int k) {
  Eigen::Index dim = 1;
  for (int s = 0; s < k; ++s) dim *= n;
  const Eigen::Index right = [&] {
    Eigen::Index r = 1;
    for (int s = slot + 1; s < k; ++s) r *= n;
    return r;
  }();
  ComplexMatrix out = ComplexMatrix::Zero(dim, dim);
  for (Eigen::Index row = 0; row < dim; ++row) {
    const Eigen::Index rs = (row / right) % n;  // slot index in the row
    const Eigen::Index row_base = row - rs * right;
    for (Eigen::Index col = 0; col < dim; ++col) {
      const Eigen::Index cs = (col / right) % n;
      const Eigen::Index col_base = col - cs * right;
      Complex acc = 0.0;
      for (Eigen::Index p = 0; p < n; ++p)
        for (Eigen::Index q = 0; q < n; ++q)
          acc += choi(rs * n + p, cs * n + q) *
                 x(row_base + p * right, col_base + q * right);
      out(row, col) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Exact fourth moment E|S|^4 evaluated through the S4 projector expansion
/// (n <= 4). M must be hermiticity preserving so that M and its conjugated
/// version coincide.
inline double moment4_exact_s4(const HermitianOperator& a,
                               const HermPreservingMap& m) {
  const Eigen::Index n = a.dim();
  if (n != m.dim) throw DimensionError("moment4_exact_s4: dims differ");
  const S4ProjectorSet s4 = s4_projectors(n);
  const ComplexMatrix a4 = tensor_product(
      tensor_product(a.matrix(), a.matrix()),
      tensor_product(a.matrix(), a.matrix()));
  // M^{2,2}(P_1): the map applied to each of the four slots
  ComplexMatrix w = s4.projectors[0].matrix();
  for (int slot = 0; slot < 4; ++slot)
    w = detail::apply_to_slot(w, m.choi.matrix(), n, slot, 4);
  double acc = 0.0;
  for (int i = 0; i < 5; ++i) {
    if (s4.dims[i] <= 0.5) continue;
    const double ai = (a4 * s4.projectors[i].matrix()).trace().real() /
                      s4.dims[i];
    acc += ai * (s4.projectors[i].matrix() * w).trace().real();
  }
  return acc / s4.dims[0];
}

// ---------------------------------------------------------------------------
// Tensor networks

struct Tensor {
  std::vector<Eigen::Index> dims;  // one entry per leg
  std::vector<Complex> data;       // row-major over the legs

  Eigen::Index size() const {
    Eigen::Index s = 1;
    for (Eigen::Index d : dims) s *= d;
    return s;
  }
  double frobenius() const {
    double acc = 0.0;
    for (const Complex& v : data) acc += std::norm(v);
    return std::sqrt(acc);
  }
};

struct LegRef {
  int tensor = 0;
  int leg = 0;
  friend bool operator==(const LegRef& a, const LegRef& b) {
    return a.tensor == b.tensor && a.leg == b.leg;
  }
};

struct TensorNetwork {
  std::vector<Tensor> tensors;
  std::vector<std::pair<LegRef, LegRef>> contractions;
  bool allow_self_contractions = false;
};

namespace detail {

struct WorkTensor {
  Tensor t;
  std::vector<LegRef> legs;  // original ids of the current legs
};

inline void validate_network(const TensorNetwork& tn) {
  std::vector<std::vector<char>> used(tn.tensors.size());
  for (std::size_t i = 0; i < tn.tensors.size(); ++i) {
    const Tensor& t = tn.tensors[i];
    if (t.size() != static_cast<Eigen::Index>(t.data.size()))
      throw std::invalid_argument("tensor data length does not match dims");
    used[i].assign(t.dims.size(), 0);
  }
  for (const auto& [a, b] : tn.contractions) {
    auto check = [&](const LegRef& r) {
      if (r.tensor < 0 || r.tensor >= static_cast<int>(tn.tensors.size()) ||
          r.leg < 0 ||
          r.leg >= static_cast<int>(tn.tensors[r.tensor].dims.size()))
        throw std::invalid_argument("contraction pointer out of range");
      if (used[r.tensor][r.leg])
        throw std::invalid_argument("leg appears in more than one pair");
      used[r.tensor][r.leg] = 1;
    };
    check(a);
    check(b);
    if (tn.tensors[a.tensor].dims[a.leg] != tn.tensors[b.tensor].dims[b.leg])
      throw DimensionError("paired legs have different dimensions");
    if (a.tensor == b.tensor && !tn.allow_self_contractions)
      throw std::invalid_argument("self-contraction present but not allowed");
  }
}

/// Traces out leg positions (p, q) of a single tensor.
inline WorkTensor trace_pair(const WorkTensor& w, int p, int q) {
  if (p > q) std::swap(p, q);
  const auto& dims = w.t.dims;
  const Eigen::Index dp = dims[p];
  std::vector<Eigen::Index> out_dims;
  std::vector<LegRef> out_legs;
  for (int l = 0; l < static_cast<int>(dims.size()); ++l)
    if (l != p && l != q) {
      out_dims.push_back(dims[l]);
      out_legs.push_back(w.legs[l]);
    }
  WorkTensor out;
  out.t.dims = out_dims;
  out.legs = out_legs;
  Eigen::Index out_size = 1;
  for (Eigen::Index d : out_dims) out_size *= d;
  out.t.data.assign(out_size, Complex(0.0));

  std::vector<Eigen::Index> strides(dims.size());
  Eigen::Index acc = 1;
  for (int l = static_cast<int>(dims.size()) - 1; l >= 0; --l) {
    strides[l] = acc;
    acc *= dims[l];
  }
  std::vector<Eigen::Index> idx(out_dims.size(), 0);
  for (Eigen::Index o = 0; o < out_size; ++o) {
    Eigen::Index base = 0;
    int k = 0;
    for (int l = 0; l < static_cast<int>(dims.size()); ++l) {
      if (l == p || l == q) continue;
      base += idx[k] * strides[l];
      ++k;
    }
    Complex s = 0.0;
    for (Eigen::Index v = 0; v < dp; ++v)
      s += w.t.data[base + v * (strides[p] + strides[q])];
    out.t.data[o] = s;
    for (int l = static_cast<int>(out_dims.size()) - 1; l >= 0; --l) {
      if (++idx[l] < out_dims[l]) break;
      idx[l] = 0;
    }
  }
  return out;
}

inline WorkTensor outer_product(const WorkTensor& a, const WorkTensor& b) {
  WorkTensor out;
  out.t.dims = a.t.dims;
  out.t.dims.insert(out.t.dims.end(), b.t.dims.begin(), b.t.dims.end());
  out.legs = a.legs;
  out.legs.insert(out.legs.end(), b.legs.begin(), b.legs.end());
  out.t.data.resize(a.t.data.size() * b.t.data.size());
  Eigen::Index k = 0;
  for (const Complex& va : a.t.data)
    for (const Complex& vb : b.t.data) out.t.data[k++] = va * vb;
  return out;
}

}  // namespace detail

/// Contracts the network by repeatedly merging the pair of tensors joined by
/// a contraction whose merge yields the smallest intermediate; remaining free
/// legs keep (tensor, leg) order.
inline Tensor contract_network(const TensorNetwork& tn) {
  detail::validate_network(tn);
  if (tn.tensors.empty())
    throw std::invalid_argument("contract_network: empty network");

  std::vector<detail::WorkTensor> work;
  for (int i = 0; i < static_cast<int>(tn.tensors.size()); ++i) {
    detail::WorkTensor w;
    w.t = tn.tensors[i];
    for (int l = 0; l < static_cast<int>(tn.tensors[i].dims.size()); ++l)
      w.legs.push_back({i, l});
    work.push_back(std::move(w));
  }
  std::vector<std::pair<LegRef, LegRef>> pending = tn.contractions;

  auto find_leg = [&](const LegRef& r) -> std::pair<int, int> {
    for (int i = 0; i < static_cast<int>(work.size()); ++i)
      for (int l = 0; l < static_cast<int>(work[i].legs.size()); ++l)
        if (work[i].legs[l] == r) return {i, l};
    throw Error("contract_network: dangling contraction pointer");
  };

  while (!pending.empty()) {
    // prefer self-pairs (cheap traces), then the smallest merge
    int chosen = -1;
    Eigen::Index best_cost = -1;
    for (int c = 0; c < static_cast<int>(pending.size()); ++c) {
      const auto [wa, la] = find_leg(pending[c].first);
      const auto [wb, lb] = find_leg(pending[c].second);
      if (wa == wb) {
        chosen = c;
        best_cost = 0;
        break;
      }
      const Eigen::Index cost = work[wa].t.size() * work[wb].t.size();
      if (best_cost < 0 || cost < best_cost) {
        best_cost = cost;
        chosen = c;
      }
    }
    auto [wa, la] = find_leg(pending[chosen].first);
    auto [wb, lb] = find_leg(pending[chosen].second);
    if (wa == wb) {
      work[wa] = detail::trace_pair(work[wa], la, lb);
      pending.erase(pending.begin() + chosen);
      continue;
    }
    if (wa > wb) std::swap(wa, wb);
    detail::WorkTensor merged = detail::outer_product(work[wa], work[wb]);
    work.erase(work.begin() + wb);
    work[wa] = std::move(merged);
    // contract every pending pair now internal to the merged tensor
    bool found = true;
    while (found) {
      found = false;
      for (int c = 0; c < static_cast<int>(pending.size()); ++c) {
        const auto [ta, la2] = find_leg(pending[c].first);
        const auto [tb, lb2] = find_leg(pending[c].second);
        if (ta == tb && ta == wa) {
          work[wa] = detail::trace_pair(work[wa], la2, lb2);
          pending.erase(pending.begin() + c);
          found = true;
          break;
        }
      }
    }
  }
  // outer product of disconnected remainders, in tensor order
  detail::WorkTensor result = work.front();
  for (std::size_t i = 1; i < work.size(); ++i)
    result = detail::outer_product(result, work[i]);
  return result.t;
}

/// Product of the tensors' Frobenius norms; an upper bound on the Frobenius
/// norm of the contraction when no self-contractions are present.
inline double tn_bound(const TensorNetwork& tn) {
  if (tn.tensors.size() < 2)
    throw std::invalid_argument("tn_bound: need at least two tensors");
  for (const auto& [a, b] : tn.contractions)
    if (a.tensor == b.tensor)
      throw std::invalid_argument("tn_bound: network has a self-contraction");
  double prod = 1.0;
  for (const Tensor& t : tn.tensors) prod *= t.frobenius();
  return prod;
}

// ---------------------------------------------------------------------------
// Probabilistic quantities behind the recovery analysis

/// Random trace-annihilating Hermitian-Choi map of effective rank <= 2r,
/// Frobenius-normalized; membership in the norm-ratio cone is enforced by
/// rejection.
inline HermPreservingMap random_cone_element(Eigen::Index n, Eigen::Index r,
                                             double c_mu, Rng& rng) {
  const Eigen::Index d = n * n;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    ComplexMatrix x(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      x(i, i) = rng.gaussian();
      for (Eigen::Index j = i + 1; j < d; ++j) {
        const Complex v = rng.cgaussian() / std::sqrt(2.0);
        x(i, j) = v;
        x(j, i) = std::conj(v);
      }
    }
    auto project_ta = [&](const ComplexMatrix& h) {
      return ComplexMatrix(
          h - tensor_product(ComplexMatrix::Identity(n, n),
                             partial_trace_first(h, n, n)) /
                  double(n));
    };
    x = project_ta(x);
    if (2 * r < d) {
      const auto [kept, tail] =
          truncate_rank(n, HermitianOperator(x), 2 * r);
      x = project_ta(kept.choi.matrix());
    }
    const double fro = x.norm();
    if (fro == 0.0) continue;
    x /= fro;
    if (schatten_norm(x, 1.0) <=
        c_mu * std::sqrt(double(r)) * x.norm() + 1e-12)
      return HermPreservingMap{n, HermitianOperator(x)};
  }
  throw Error("random_cone_element: rejection sampling did not terminate");
}

/// Sampled upper estimate of the minimum conic singular value
/// inf ||A(M)||_q / ||M||_F over the effective-rank-r cone.
inline double empirical_min_conic_sv(const MeasurementEnsemble& e,
                                     Eigen::Index r, double c_mu, long samples,
                                     double q, Rng& rng) {
  if (samples < 1)
    throw std::invalid_argument("empirical_min_conic_sv: samples >= 1");
  if (e.size() == 0) return 0.0;
  std::vector<ComplexMatrix> meas;
  meas.reserve(e.size());
  for (const auto& s : e.settings)
    meas.push_back(tensor_product(s.observable.matrix(),
                                  s.psi.projector().matrix().transpose()));
  double best = std::numeric_limits<double>::infinity();
  for (long s = 0; s < samples; ++s) {
    const HermPreservingMap m = random_cone_element(e.n, r, c_mu, rng);
    double acc = 0.0;
    double linf = 0.0;
    for (const auto& mi : meas) {
      const double v = std::abs((mi * m.choi.matrix()).trace().real());
      if (std::isinf(q))
        linf = std::max(linf, v);
      else
        acc += std::pow(v, q);
    }
    const double val = std::isinf(q) ? linf : std::pow(acc, 1.0 / q);
    best = std::min(best, val);
  }
  return best;
}

/// Monte Carlo estimate of Pr[|S| >= xi].
inline double marginal_tail_mc(const HermitianOperator& a0,
                               const HermPreservingMap& m, double xi,
                               long samples, Rng& rng) {
  if (xi < 0.0) throw std::invalid_argument("marginal_tail_mc: xi must be >= 0");
  const Eigen::Index n = a0.dim();
  long hits = 0;
  for (long s = 0; s < samples; ++s) {
    const ComplexMatrix u = haar_unitary(n, rng);
    const StateVector psi = haar_state(n, rng);
    const ComplexMatrix out = apply(m, psi.projector()).matrix();
    const double v = std::abs((u * a0.matrix() * u.adjoint() * out).trace());
    if (v >= xi) ++hits;
  }
  return double(hits) / double(samples);
}

/// Lower estimate of the mean empirical width over the unit-Frobenius cone
/// slice: random sign vectors outside, best-of-k random starts plus projected
/// ascent inside.
inline double empirical_width_mc(const MeasurementEnsemble& e, Eigen::Index r,
                                 double c_mu, long sign_samples, Rng& rng) {
  if (sign_samples < 1)
    throw std::invalid_argument("empirical_width_mc: samples >= 1");
  const Eigen::Index m = e.size();
  if (m == 0) return 0.0;
  const Eigen::Index n = e.n;
  const Eigen::Index d = n * n;
  std::vector<ComplexMatrix> meas;
  meas.reserve(m);
  for (const auto& s : e.settings)
    meas.push_back(tensor_product(s.observable.matrix(),
                                  s.psi.projector().matrix().transpose()));

  auto project_slice = [&](const ComplexMatrix& h) {
    ComplexMatrix x =
        h - tensor_product(ComplexMatrix::Identity(n, n),
                           partial_trace_first(h, n, n)) /
                double(n);
    if (2 * r < d) {
      const auto [kept, tail] = truncate_rank(n, HermitianOperator(x), 2 * r);
      x = kept.choi.matrix() -
          tensor_product(ComplexMatrix::Identity(n, n),
                         partial_trace_first(kept.choi.matrix(), n, n)) /
              double(n);
    }
    const double fro = x.norm();
    return fro > 0.0 ? ComplexMatrix(x / fro) : x;
  };

  double acc = 0.0;
  for (long s = 0; s < sign_samples; ++s) {
    ComplexMatrix h = ComplexMatrix::Zero(d, d);
    for (Eigen::Index i = 0; i < m; ++i)
      h += (rng.uniform() < 0.5 ? -1.0 : 1.0) * meas[i];
    h = 0.5 * (h + h.adjoint()) / std::sqrt(double(m));
    auto value = [&](const ComplexMatrix& j) {
      return (h * j).trace().real();
    };
    double best = -std::numeric_limits<double>::infinity();
    ComplexMatrix best_j;
    for (int k = 0; k < 10; ++k) {
      const ComplexMatrix j =
          random_cone_element(n, r, c_mu, rng).choi.matrix();
      if (value(j) > best) {
        best = value(j);
        best_j = j;
      }
    }
    for (int step = 0; step < 100; ++step) {
      const ComplexMatrix j_next = project_slice(best_j + 0.1 * h);
      if (value(j_next) > best) {
        best = value(j_next);
        best_j = j_next;
      }
    }
    acc += best;
  }
  return acc / double(sign_samples);
}

}  // namespace qpt

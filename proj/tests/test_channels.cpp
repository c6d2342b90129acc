#include <catch2/catch.hpp>

#include "qpt/channels.hpp"
#include "qpt/io.hpp"

using namespace qpt;

TEST_CASE("identity channel Choi matrix") {
  const Eigen::Index n = 3;
  const QuantumChannel id = identity_channel(n);
  // sum_{ij} |ii><jj|
  ComplexMatrix expect = ComplexMatrix::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) expect(i * n + i, j * n + j) = 1.0;
  REQUIRE((id.choi.matrix() - expect).norm() < 1e-14);
  REQUIRE(id.choi.matrix().trace().real() == Approx(double(n)));
  REQUIRE(kraus_rank(id) == 1);
}

TEST_CASE("choi/kraus round trip") {
  Rng rng(5);
  const QuantumChannel t = random_rank_r_channel(4, 3, rng);
  const KrausSet k = kraus_from_choi(t);
  REQUIRE(k.operators.size() == 3);
  const QuantumChannel back = choi_from_kraus(k);
  REQUIRE((back.choi.matrix() - t.choi.matrix()).norm() <= 1e-9);

  // completeness sum K^dagger K = 1 for CPT channels
  ComplexMatrix acc = ComplexMatrix::Zero(4, 4);
  for (const auto& op : k.operators) acc += op.adjoint() * op;
  REQUIRE((acc - ComplexMatrix::Identity(4, 4)).norm() <= 1e-9);
}

TEST_CASE("kraus_from_choi rejects non-CP maps") {
  ComplexMatrix bad = -ComplexMatrix::Identity(4, 4);
  QuantumChannel t{2, HermitianOperator(bad)};
  REQUIRE_THROWS_AS(kraus_from_choi(t), NotCompletelyPositive);
}

TEST_CASE("apply") {
  Rng rng(9);
  const Eigen::Index n = 3;
  SECTION("identity acts trivially") {
    const QuantumChannel id = identity_channel(n);
    const HermitianOperator rho = haar_state(n, rng).projector();
    REQUIRE((apply(id, rho).matrix() - rho.matrix()).norm() < 1e-12);
  }
  SECTION("depolarizing maps everything to the maximally mixed state") {
    const QuantumChannel dep = depolarizing_channel(n);
    const HermitianOperator rho = haar_state(n, rng).projector();
    REQUIRE((apply(dep, rho).matrix() -
             ComplexMatrix::Identity(n, n) / double(n))
                .norm() < 1e-12);
  }
  SECTION("unitary channel conjugates") {
    ComplexMatrix sx = ComplexMatrix::Zero(2, 2);
    sx(0, 1) = 1.0;
    sx(1, 0) = 1.0;
    const QuantumChannel ux = unitary_channel(sx);
    const HermitianOperator rho0 = StateVector::basis_state(2, 0).projector();
    const HermitianOperator out = apply(ux, rho0);
    REQUIRE(std::abs(out.matrix()(1, 1) - Complex(1, 0)) < 1e-14);
  }
  SECTION("trace preservation") {
    const QuantumChannel t = random_rank_r_channel(n, 4, rng);
    const HermitianOperator rho = haar_state(n, rng).projector();
    REQUIRE(apply(t, rho).matrix().trace().real() == Approx(1.0).margin(1e-9));
    REQUIRE((partial_trace_first(t.choi, n, n).matrix() -
             ComplexMatrix::Identity(n, n))
                .norm() <= 1e-9);
  }
}

TEST_CASE("random channels have the requested Kraus rank") {
  Rng rng(21);
  SECTION("rank one is unitary") {
    const QuantumChannel t = random_rank_r_channel(3, 1, rng);
    REQUIRE(kraus_rank(t) == 1);
  }
  SECTION("n = 4, r = 2") {
    const QuantumChannel t = random_rank_r_channel(4, 2, rng);
    REQUIRE(kraus_rank(t, 1e-9) == 2);
  }
  SECTION("full rank for n = 2") {
    const QuantumChannel t = random_rank_r_channel(2, 4, rng);
    REQUIRE(kraus_rank(t, 1e-9) == 4);
    const HermEig eig = herm_eig(t.choi);
    REQUIRE(eig.eigenvalues.minCoeff() > 0.0);
  }
  SECTION("out-of-range rank throws") {
    REQUIRE_THROWS_AS(random_rank_r_channel(2, 5, rng), std::invalid_argument);
  }
  SECTION("fixed seed reproduces bit-exactly") {
    Rng a(1234), b(1234);
    const QuantumChannel ta = random_rank_r_channel(3, 2, a);
    const QuantumChannel tb = random_rank_r_channel(3, 2, b);
    REQUIRE((ta.choi.matrix() - tb.choi.matrix()).norm() == 0.0);
  }
}

TEST_CASE("standard channels") {
  SECTION("Toffoli is a rank-one channel on dimension 8") {
    const QuantumChannel t = toffoli_channel();
    REQUIRE(t.dim == 8);
    REQUIRE(kraus_rank(t) == 1);
    // |110> -> |111>
    const HermitianOperator rho = StateVector::basis_state(8, 6).projector();
    const HermitianOperator out = apply(t, rho);
    REQUIRE(std::abs(out.matrix()(7, 7) - Complex(1, 0)) < 1e-14);
  }
  SECTION("depolarizing Choi matrix is 1/n with full rank") {
    const QuantumChannel dep = depolarizing_channel(3);
    REQUIRE((dep.choi.matrix() - ComplexMatrix::Identity(9, 9) / 3.0).norm() <
            1e-14);
    REQUIRE(kraus_rank(dep) == 9);
  }
  SECTION("mix endpoints and affinity") {
    Rng rng(3);
    const QuantumChannel t1 = random_rank_r_channel(2, 1, rng);
    const QuantumChannel t2 = depolarizing_channel(2);
    REQUIRE((mix(t1, t2, 0.0).choi.matrix() - t1.choi.matrix()).norm() == 0.0);
    const double lam = 0.3;
    const ComplexMatrix expect =
        (1 - lam) * t1.choi.matrix() + lam * t2.choi.matrix();
    REQUIRE((mix(t1, t2, lam).choi.matrix() - expect).norm() == 0.0);
    REQUIRE_THROWS_AS(mix(t1, t2, 1.5), std::invalid_argument);
  }
}

TEST_CASE("CPT normalization invariants") {
  Rng rng(33);
  for (Eigen::Index r : {1, 3, 9}) {
    const QuantumChannel t = random_rank_r_channel(3, r, rng);
    REQUIRE(t.choi.matrix().trace().real() == Approx(3.0).margin(1e-9));
    REQUIRE(schatten_norm(t.choi.matrix(), 1) == Approx(3.0).margin(1e-9));
  }
}

TEST_CASE("rank truncation") {
  Rng rng(55);
  SECTION("unitary channel truncates to itself at r = 1") {
    const QuantumChannel t = random_rank_r_channel(3, 1, rng);
    const auto [tr, tc] = truncate_rank(t, 1);
    REQUIRE(tc.choi.matrix().norm() < 1e-9);
  }
  SECTION("depolarizing n = 2 keeps half the weight at r = 2") {
    const QuantumChannel dep = depolarizing_channel(2);
    const auto [tr, tc] = truncate_rank(dep, 2);
    REQUIRE(schatten_norm(tc.choi.matrix(), 1) == Approx(1.0).margin(1e-12));
  }
  SECTION("split is exact") {
    const QuantumChannel t = random_rank_r_channel(3, 5, rng);
    const auto [tr, tc] = truncate_rank(t, 2);
    REQUIRE((tr.choi.matrix() + tc.choi.matrix() - t.choi.matrix()).norm() <
            1e-12);
    REQUIRE(kraus_rank(tr.choi) == 2);
  }
}

TEST_CASE("cpt dimension count") {
  REQUIRE(cpt_dimension(4) == 240);
  REQUIRE(cpt_dimension(8) == 4032);
}

TEST_CASE("channel json round trip") {
  Rng rng(77);
  const QuantumChannel t = random_rank_r_channel(2, 2, rng);
  const Json j = channel_to_json(t, {"random", 77, 2});
  const QuantumChannel back = channel_from_json(j);
  REQUIRE(back.dim == t.dim);
  REQUIRE((back.choi.matrix() - t.choi.matrix()).norm() < 1e-15);
  REQUIRE(j["meta"]["kind"] == "random");
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mfcount/counting.hpp"
#include "mfcount/sampling.hpp"
#include "oracles.hpp"

using namespace mfcount;

namespace {

Orbital plane_wave(const GridSpec& g, int m) {
  return Orbital::normalized(LatticeField::sample(
      g, [&](double x) { return std::polar(1.0, 2.0 * std::numbers::pi * m * x / g.length); }));
}

Orbital orthogonal_to(const Orbital& phi, Rng& rng) {
  const ComplexVector u = phi.mode_vector();
  ComplexVector w = random_complex_vector(u.size(), rng);
  w -= u * u.dot(w);
  w -= u * u.dot(w);
  return Orbital::from_mode_vector(phi.grid(), w.normalized());
}

/// Random unitary from the QR factors of a Gaussian matrix.
ComplexMatrix random_unitary(int m, Rng& rng) {
  ComplexMatrix a(m, m);
  for (int j = 0; j < m; ++j) a.col(j) = random_complex_vector(m, rng);
  Eigen::HouseholderQR<ComplexMatrix> qr(a);
  return qr.householderQ() * ComplexMatrix::Identity(m, m);
}

struct Case {
  int modes;
  int particles;
};

const std::vector<Case> kOracleCases{{2, 2}, {3, 2}, {4, 2}, {2, 3}, {3, 3}, {4, 3}};

}  // namespace

TEST(AdaptedBasis, UnitaryWithPhiFirst) {
  Rng rng(41);
  for (int m : {2, 3, 8}) {
    const auto g = build_grid(2.0, m);
    for (int trial = 0; trial < 10; ++trial) {
      const auto phi = random_orbital(g, rng);
      const auto a = adapted_basis(phi);
      EXPECT_LT((a.unitary.adjoint() * a.unitary - ComplexMatrix::Identity(m, m)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((a.unitary.col(0) - phi.mode_vector()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(AdaptedBasis, CoordinateModeGivesIdentityLikeUnitary) {
  const auto g = build_grid(2.0, 4);
  ComplexVector e0 = ComplexVector::Zero(4);
  e0[0] = 1.0;
  const auto a = adapted_basis(Orbital::from_mode_vector(g, e0));
  EXPECT_LT((a.unitary.cwiseAbs() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AdaptedBasis, Deterministic) {
  Rng rng(42);
  const auto phi = random_orbital(build_grid(1.0, 6), rng);
  const auto a = adapted_basis(phi);
  const auto b = adapted_basis(phi);
  EXPECT_EQ(a.unitary, b.unitary);
}

TEST(ModeTransform, MatchesFirstQuantizedRotation) {
  Rng rng(43);
  for (const auto& c : kOracleCases) {
    auto basis = make_basis(c.modes, c.particles);
    const auto psi = random_state(basis, rng);
    const ComplexMatrix u = random_unitary(c.modes, rng);
    const ComplexVector rotated = transform_modes(*basis, psi.coefficients(), u);
    // Coefficients in the new modes: tensor contracted with U^+ on every slot.
    ComplexVector t = first_quantized_tensor(psi).data;
    for (int j = 0; j < c.particles; ++j) t = oracle::on_slot(u.adjoint(), j, c.particles) * t;
    FirstQuantizedTensor ft{c.modes, c.particles, t};
    const auto expected = from_first_quantized(ft, basis);
    EXPECT_LT((rotated - expected.coefficients()).cwiseAbs().maxCoeff(), 1e-12);
    const ComplexVector back = transform_modes(*basis, rotated, u.adjoint());
    EXPECT_LT((back - psi.coefficients()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ModeTransform, RejectsNonUnitary) {
  auto basis = make_basis(3, 2);
  EXPECT_THROW(transform_modes(*basis, ComplexVector::Zero(6), 2.0 * ComplexMatrix::Identity(3, 3)),
               InvalidArgument);
}

TEST(Weights, Families) {
  const auto lin = WeightSpec::linear(4);
  for (int k = 0; k <= 4; ++k) EXPECT_EQ(lin(k), k / 4.0);
  const auto pw = WeightSpec::power(4, 2.0);
  EXPECT_DOUBLE_EQ(pw(2), 0.25);
  // N = 16, gamma = 1/2: cutoff 4.
  const auto tr = WeightSpec::truncated(16, 0.5);
  EXPECT_DOUBLE_EQ(tr(2), 0.5);
  EXPECT_DOUBLE_EQ(tr(4), 1.0);
  EXPECT_EQ(tr(5), 0.0);
  EXPECT_EQ(tr(16), 0.0);
  EXPECT_THROW(WeightSpec::power(4, 0.0), InvalidArgument);
  EXPECT_THROW(WeightSpec::truncated(4, 1.0), InvalidArgument);
  EXPECT_THROW(WeightSpec::custom({0.0, -1.0}), InvalidArgument);
  EXPECT_EQ(WeightSpec::power(3, 2.0).name(), "power2");
  EXPECT_TRUE(WeightSpec::power(4, 2.0).dominated_by(lin));
  EXPECT_FALSE(lin.dominated_by(WeightSpec::power(4, 2.0)));
}

TEST(Spectrum, ProductAndOneDefect) {
  Rng rng(44);
  const auto g = build_grid(3.0, 6);
  for (int n : {1, 2, 4}) {
    auto basis = make_basis(6, n);
    const auto phi = random_orbital(g, rng);
    const auto s0 = counting_spectrum(product_state(phi, basis), phi);
    EXPECT_NEAR(s0.weights[0], 1.0, 1e-12);
    for (int k = 1; k <= n; ++k) EXPECT_NEAR(s0.weights[k], 0.0, 1e-12);
    const auto s1 = counting_spectrum(one_defect_state(phi, orthogonal_to(phi, rng), basis), phi);
    for (int k = 0; k <= n; ++k) EXPECT_NEAR(s1.weights[k], k == 1 ? 1.0 : 0.0, 1e-12);
  }
}

TEST(Spectrum, CompletenessOnRandomStates) {
  Rng rng(45);
  for (const auto& c : std::vector<Case>{{4, 2}, {4, 5}, {8, 3}, {8, 4}}) {
    const auto g = build_grid(2.0, c.modes);
    auto basis = make_basis(c.modes, c.particles);
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = counting_spectrum(random_state(basis, rng), random_orbital(g, rng));
      EXPECT_NEAR(s.total(), 1.0, 1e-10);
      for (double w : s.weights) EXPECT_GE(w, -1e-15);
    }
  }
}

TEST(Spectrum, MatchesSubsetSumOracle) {
  Rng rng(46);
  for (const auto& c : kOracleCases) {
    const auto g = build_grid(2.0, c.modes);
    auto basis = make_basis(c.modes, c.particles);
    for (int trial = 0; trial < 5; ++trial) {
      const auto psi = random_state(basis, rng);
      const auto phi = random_orbital(g, rng);
      const auto s = counting_spectrum(psi, phi);
      const ComplexVector t = first_quantized_tensor(psi).data;
      const ComplexVector u = phi.mode_vector();
      for (int k = 0; k <= c.particles; ++k) {
        const ComplexMatrix pk = oracle::counting_projector_dense(u, c.particles, k);
        EXPECT_NEAR(s.weights[k], (pk * t).squaredNorm(), 1e-10);
      }
    }
  }
}

TEST(Spectrum, IndependentOfBasisCompletion) {
  Rng rng(47);
  const auto g = build_grid(2.0, 5);
  auto basis = make_basis(5, 3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto phi = random_orbital(g, rng);
    const auto psi = random_state(basis, rng);
    AdaptedBasis other = adapted_basis(phi);
    // Rotate the complement columns by an arbitrary unitary.
    const ComplexMatrix w = random_unitary(4, rng);
    other.unitary.rightCols(4) = (other.unitary.rightCols(4) * w).eval();
    const auto a = counting_spectrum(psi, phi);
    const auto b = counting_spectrum(psi, other);
    for (int k = 0; k <= 3; ++k) EXPECT_NEAR(a.weights[k], b.weights[k], 1e-11);
  }
}

TEST(Spectrum, RejectsUnnormalizedState) {
  const auto g = build_grid(2.0, 3);
  auto basis = make_basis(3, 2);
  const auto phi = plane_wave(g, 0);
  EXPECT_THROW(counting_spectrum(ManyBodyState(basis, ComplexVector::Ones(6)), phi), InvalidArgument);
  EXPECT_THROW(counting_spectrum(product_state(phi, basis), plane_wave(build_grid(2.0, 4), 0)),
               InvalidArgument);
}

TEST(Alpha, ExamplesAndBounds) {
  Rng rng(48);
  const auto g = build_grid(2.0, 4);
  for (int n : {2, 3, 5}) {
    auto basis = make_basis(4, n);
    const auto phi = random_orbital(g, rng);
    EXPECT_NEAR(alpha(product_state(phi, basis), phi, WeightSpec::power(n, 0.5)), 0.0, 1e-12);
    EXPECT_NEAR(alpha(one_defect_state(phi, orthogonal_to(phi, rng), basis), phi, WeightSpec::linear(n)),
                1.0 / n, 1e-12);
    const auto psi = random_state(basis, rng);
    const auto w = WeightSpec::power(n, 2.0);
    const double a = alpha(psi, phi, w);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0 + 1e-12);
    EXPECT_THROW(alpha(psi, phi, WeightSpec::linear(n + 1)), InvalidArgument);
  }
}

TEST(Alpha, PowerWeightMatchesOracleSpectrum) {
  Rng rng(49);
  for (const auto& c : kOracleCases) {
    const auto g = build_grid(2.0, c.modes);
    auto basis = make_basis(c.modes, c.particles);
    const auto psi = random_state(basis, rng);
    const auto phi = random_orbital(g, rng);
    const ComplexVector t = first_quantized_tensor(psi).data;
    double expected = 0.0;
    for (int k = 0; k <= c.particles; ++k) {
      const ComplexMatrix pk = oracle::counting_projector_dense(phi.mode_vector(), c.particles, k);
      expected += std::pow(static_cast<double>(k) / c.particles, 2.0) * (pk * t).squaredNorm();
    }
    EXPECT_NEAR(alpha(psi, phi, WeightSpec::power(c.particles, 2.0)), expected, 1e-10);
  }
}

TEST(Alpha, WeightDomination) {
  Rng rng(50);
  const auto g = build_grid(2.0, 4);
  auto basis = make_basis(4, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto psi = random_state(basis, rng);
    const auto phi = random_orbital(g, rng);
    const auto s = counting_spectrum(psi, phi);
    const auto lin = WeightSpec::linear(4);
    for (const auto& small : {WeightSpec::power(4, 2.0), WeightSpec::power(4, 3.5), WeightSpec::truncated(4, 0.5)}) {
      if (!small.dominated_by(lin)) continue;
      EXPECT_LE(alpha(s, small), alpha(s, lin) + 1e-12);
    }
  }
}

TEST(Nhat, KernelAndEigenvector) {
  Rng rng(51);
  const auto g = build_grid(2.0, 5);
  auto basis = make_basis(5, 4);
  const auto phi = random_orbital(g, rng);
  EXPECT_LT(nhat_apply(product_state(phi, basis), phi).norm(), 1e-12);
  const auto defect = one_defect_state(phi, orthogonal_to(phi, rng), basis);
  const auto applied = nhat_apply(defect, phi);
  EXPECT_LT((applied.coefficients() - 0.25 * defect.coefficients()).cwiseAbs().maxCoeff(), 1e-12);
  const auto inverse = nhat_power(defect, phi, -1.0);
  EXPECT_LT((inverse.coefficients() - 4.0 * defect.coefficients()).cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_THROW(nhat_power(defect, phi, 0.0), InvalidArgument);
}

TEST(Nhat, MatchesProjectorSum) {
  Rng rng(52);
  for (const auto& c : kOracleCases) {
    const auto g = build_grid(2.0, c.modes);
    auto basis = make_basis(c.modes, c.particles);
    const auto psi = random_state(basis, rng);
    const auto phi = random_orbital(g, rng);
    const ComplexVector expected =
        oracle::nhat_dense(phi.mode_vector(), c.particles) * first_quantized_tensor(psi).data;
    const ComplexVector got = first_quantized_tensor(nhat_apply(psi, phi)).data;
    EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-11);
  }
}

TEST(Nhat, IdentitiesOnRandomStates) {
  Rng rng(53);
  for (const auto& c : std::vector<Case>{{4, 2}, {4, 4}, {8, 3}, {8, 5}}) {
    const auto g = build_grid(2.0, c.modes);
    auto basis = make_basis(c.modes, c.particles);
    for (int trial = 0; trial < 10; ++trial) {
      const auto psi = random_state(basis, rng);
      const auto phi = random_orbital(g, rng);
      const double expectation = psi.coefficients().dot(nhat_apply(psi, phi).coefficients()).real();
      const double q1 = q1_norm_squared(psi, phi);
      const double a = alpha(psi, phi, WeightSpec::linear(c.particles));
      EXPECT_NEAR(expectation, q1, 1e-11);
      EXPECT_NEAR(expectation, a, 1e-11);

      const auto half = nhat_power(psi, phi, 0.5);
      EXPECT_NEAR(half.coefficients().squaredNorm(), expectation, 1e-11);
      const auto same = nhat_power(psi, phi, 1.0);
      EXPECT_LT((same.coefficients() - nhat_apply(psi, phi).coefficients()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Nhat, NegativePowerInvertsOnExcitedSector) {
  Rng rng(54);
  const auto g = build_grid(2.0, 4);
  auto basis = make_basis(4, 3);
  const auto phi = random_orbital(g, rng);
  const auto psi = random_state(basis, rng);
  // Remove the k = 0 component so only the sector where n^ is invertible remains.
  const auto excited = apply_counting_function(psi, phi, [](int k) { return k == 0 ? 0.0 : 1.0; });
  for (double j : {0.5, 1.0, 2.0}) {
    const auto round = nhat_power(nhat_power(excited, phi, -j), phi, j);
    EXPECT_LT((round.coefficients() - excited.coefficients()).cwiseAbs().maxCoeff(), 1e-11);
  }
}

TEST(Q1Norm, ExamplesAndOracle) {
  Rng rng(55);
  for (const auto& c : kOracleCases) {
    const auto g = build_grid(2.0, c.modes);
    auto basis = make_basis(c.modes, c.particles);
    const auto phi = random_orbital(g, rng);
    EXPECT_NEAR(q1_norm_squared(product_state(phi, basis), phi), 0.0, 1e-12);
    const auto defect = one_defect_state(phi, orthogonal_to(phi, rng), basis);
    EXPECT_NEAR(q1_norm_squared(defect, phi), 1.0 / c.particles, 1e-12);
    const auto psi = random_state(basis, rng);
    const ComplexVector q1t = oracle::on_slot(oracle::complement(phi.mode_vector()), 0, c.particles) *
                              first_quantized_tensor(psi).data;
    EXPECT_NEAR(q1_norm_squared(psi, phi), q1t.squaredNorm(), 1e-11);
  }
}

TEST(ReducedDensityTest, ProductAndDefect) {
  Rng rng(56);
  const auto g = build_grid(2.0, 5);
  for (int n : {2, 3}) {
    auto basis = make_basis(5, n);
    const auto phi = random_orbital(g, rng);
    const ComplexVector u = phi.mode_vector();
    const auto mu0 = reduced_density(product_state(phi, basis));
    EXPECT_LT((mu0.matrix - u * u.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
    const auto perp = orthogonal_to(phi, rng);
    const ComplexVector w = perp.mode_vector();
    const auto mu1 = reduced_density(one_defect_state(phi, perp, basis));
    const ComplexMatrix expected = (1.0 - 1.0 / n) * u * u.adjoint() + (1.0 / n) * w * w.adjoint();
    EXPECT_LT((mu1.matrix - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ReducedDensityTest, MatchesPartialTrace) {
  Rng rng(57);
  for (const auto& c : kOracleCases) {
    auto basis = make_basis(c.modes, c.particles);
    const auto psi = random_state(basis, rng);
    const auto mu = reduced_density(psi);
    const ComplexMatrix expected =
        oracle::partial_trace_first(first_quantized_tensor(psi).data, c.modes, c.particles);
    // mu(x, y) = sum Psi(x, ..) conj(Psi(y, ..)) in the convention of the partial trace.
    EXPECT_LT((mu.matrix - expected).cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_NO_THROW(mu.validate());
  }
}

TEST(MuDecompositionTest, Examples) {
  Rng rng(58);
  const auto g = build_grid(2.0, 4);
  auto basis = make_basis(4, 3);
  const auto phi = random_orbital(g, rng);
  const ComplexVector u = phi.mode_vector();
  const auto d0 = mu_decomposition(product_state(phi, basis), phi);
  EXPECT_LT((d0.pp - u * u.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(d0.qp.cwiseAbs().maxCoeff() + d0.pq.cwiseAbs().maxCoeff() + d0.qq.cwiseAbs().maxCoeff(), 1e-12);
  const auto perp = orthogonal_to(phi, rng);
  const ComplexVector w = perp.mode_vector();
  const auto d1 = mu_decomposition(one_defect_state(phi, perp, basis), phi);
  EXPECT_LT((d1.qq - w * w.adjoint() / 3.0).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(d1.qp.cwiseAbs().maxCoeff() + d1.pq.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MuDecompositionTest, RandomStateBounds) {
  Rng rng(59);
  for (const auto& c : std::vector<Case>{{3, 2}, {4, 3}, {8, 4}}) {
    const auto g = build_grid(2.0, c.modes);
    auto basis = make_basis(c.modes, c.particles);
    for (int trial = 0; trial < 10; ++trial) {
      const auto psi = trial % 2 ? random_state(basis, rng)
                                 : near_condensate_state(random_orbital(g, rng), basis, 0.2, rng);
      const auto phi = random_orbital(g, rng);
      const auto d = mu_decomposition(psi, phi);
      const auto mu = reduced_density(psi);
      EXPECT_LT((d.sum() - mu.matrix).cwiseAbs().maxCoeff(), 1e-11);
      const double q2 = q1_norm_squared(psi, phi);
      const double p2 = 1.0 - q2;
      const ComplexVector u = phi.mode_vector();
      EXPECT_LT((d.pp - p2 * u * u.adjoint()).cwiseAbs().maxCoeff(), 1e-11);
      const double cross = std::sqrt(q2 * p2);
      EXPECT_LE(operator_norm(d.qp), cross + 1e-10);
      EXPECT_LE(operator_norm(d.pq), cross + 1e-10);
      EXPECT_LE(operator_norm(d.qq), q2 + 1e-10);
    }
  }
}

TEST(DensityDistance, Examples) {
  Rng rng(60);
  const auto g = build_grid(2.0, 5);
  for (int n : {2, 4}) {
    auto basis = make_basis(5, n);
    const auto phi = random_orbital(g, rng);
    const auto mu0 = reduced_density(product_state(phi, basis));
    EXPECT_NEAR(density_distance(mu0, phi, DensityNorm::Operator), 0.0, 1e-12);
    EXPECT_NEAR(density_distance(mu0, phi, DensityNorm::Trace), 0.0, 1e-12);
    const auto mu1 = reduced_density(one_defect_state(phi, orthogonal_to(phi, rng), basis));
    EXPECT_NEAR(density_distance(mu1, phi, DensityNorm::Operator), 1.0 / n, 1e-11);
    EXPECT_NEAR(density_distance(mu1, phi, DensityNorm::Trace), 2.0 / n, 1e-11);
  }
}

TEST(DensityDistance, TraceDominatesOperator) {
  Rng rng(61);
  const auto g = build_grid(2.0, 4);
  auto basis = make_basis(4, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto mu = reduced_density(random_state(basis, rng));
    const auto phi = random_orbital(g, rng);
    const double op = density_distance(mu, phi, DensityNorm::Operator);
    EXPECT_GE(op, 0.0);
    EXPECT_GE(density_distance(mu, phi, DensityNorm::Trace), op - 1e-15);
    // Operator distance is the largest singular value.
    EXPECT_NEAR(op, operator_norm(mu.matrix - phi.mode_vector() * phi.mode_vector().adjoint()), 1e-12);
  }
}

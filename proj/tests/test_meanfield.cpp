#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mfcount/meanfield.hpp"
#include "mfcount/sampling.hpp"
#include "oracles.hpp"

using namespace mfcount;

namespace {

Orbital plane_wave(const GridSpec& g, int m) {
  return Orbital::normalized(LatticeField::sample(
      g, [&](double x) { return std::polar(1.0, 2.0 * std::numbers::pi * m * x / g.length); }));
}

Orbital gaussian_orbital(const GridSpec& g, double center, double width, double k = 0.0) {
  return Orbital::normalized(LatticeField::sample(g, [&](double x) {
    double d = x - center;
    d -= g.length * std::round(d / g.length);
    return std::exp(-0.5 * d * d / (width * width)) * std::polar(1.0, k * x);
  }));
}

double distance(const LatticeField& a, const LatticeField& b) { return lp_norm(a - b, 2.0); }

}  // namespace

TEST(OrbitalTest, RejectsUnnormalizedField) {
  const auto g = build_grid(2.0, 4);
  EXPECT_THROW(Orbital(LatticeField::constant(g, 1.0)), InvalidArgument);
  EXPECT_NO_THROW(Orbital(LatticeField::constant(g, 1.0 / std::sqrt(2.0))));
  EXPECT_THROW(Orbital::normalized(LatticeField::zeros(g)), InvalidArgument);
}

TEST(OrbitalTest, ModeVectorIsUnitAndRoundTrips) {
  Rng rng(1);
  const auto g = build_grid(3.0, 9);
  const auto phi = random_orbital(g, rng);
  EXPECT_NEAR(phi.mode_vector().norm(), 1.0, 1e-14);
  const auto back = Orbital::from_mode_vector(g, phi.mode_vector());
  EXPECT_LT(distance(back.field(), phi.field()), 1e-14);
}

TEST(Trap, Protocols) {
  const auto g = build_grid(2.0, 4);
  const auto base = LatticeField::constant(g, 2.0);
  const TrapProtocol constant(TrapKind::Constant, base);
  const TrapProtocol ramp(TrapKind::LinearRampOff, base, 2.0);
  const TrapProtocol quench(TrapKind::Quench, base, 1.0);
  EXPECT_EQ(constant.scale(5.0), 1.0);
  EXPECT_DOUBLE_EQ(ramp.scale(0.5), 0.75);
  EXPECT_EQ(ramp.scale(3.0), 0.0);
  EXPECT_EQ(quench.scale(0.99), 1.0);
  EXPECT_EQ(quench.scale(1.0), 0.0);
  EXPECT_DOUBLE_EQ(ramp.at(1.0)[2], 1.0);
  EXPECT_THROW(TrapProtocol(TrapKind::LinearRampOff, base, 0.0), InvalidArgument);
  EXPECT_THROW(TrapProtocol(TrapKind::Quench, base, -1.0), InvalidArgument);
  EXPECT_EQ(trap_kind_from_string(to_string(TrapKind::LinearRampOff)), TrapKind::LinearRampOff);
  EXPECT_THROW(trap_kind_from_string("wiggle"), InvalidArgument);
}

TEST(Params, Steps) {
  EXPECT_EQ((HartreeParams{0.01, 1.0}).steps(), 100);
  EXPECT_EQ((HartreeParams{0.1, 0.0}).steps(), 0);
  EXPECT_THROW((HartreeParams{0.3, 1.0}).steps(), InvalidArgument);
  EXPECT_THROW((HartreeParams{0.0, 1.0}).steps(), InvalidArgument);
  EXPECT_THROW((HartreeParams{0.1, -1.0}).steps(), InvalidArgument);
}

TEST(MeanFieldPotential, ZeroAndConstantKernel) {
  Rng rng(2);
  const auto g = build_grid(4.0, 16);
  const auto phi = random_orbital(g, rng);
  EXPECT_EQ(mean_field_potential(phi, LatticeField::zeros(g)).cwiseAbs().maxCoeff(), 0.0);
  const RealVector c = mean_field_potential(phi, LatticeField::constant(g, 0.7));
  EXPECT_LT((c.array() - 0.7).abs().maxCoeff(), 1e-12);
}

TEST(MeanFieldPotential, MatchesDirectSum) {
  Rng rng(3);
  for (int points : {4, 8, 15}) {
    const auto g = build_grid(3.0, points);
    const auto phi = random_orbital(g, rng);
    const auto v = random_even_field(g, rng);
    const ComplexVector expected = oracle::direct_convolution(
        v.values(), phi.field().modulus_squared().values(), g.spacing);
    EXPECT_LT((mean_field_potential(phi, v).cast<Complex>() - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MeanFieldPotential, GridMismatchThrows) {
  const auto phi = Orbital::normalized(LatticeField::constant(build_grid(1.0, 4), 1.0));
  EXPECT_THROW(mean_field_potential(phi, LatticeField::zeros(build_grid(2.0, 4))), InvalidArgument);
}

TEST(HartreeStep, FreePlaneWaveAcquiresPhase) {
  const auto g = build_grid(2.0, 16);
  const auto none = TrapProtocol::none(g);
  const auto v = LatticeField::zeros(g);
  for (int m : {0, 1, 3, 8}) {
    const auto phi = plane_wave(g, m);
    const double e = kinetic_symbol(g)[m];
    for (auto scheme : {HartreeScheme::Splitting, HartreeScheme::ExplicitRk4}) {
      // Explicit RK4 needs E dt well inside its stability region.
      const double dt = scheme == HartreeScheme::Splitting ? 0.013 : 5e-4;
      const auto next = hartree_step(phi.field(), none, v, 0.0, dt, scheme);
      const LatticeField expected = phi.field() * std::polar(1.0, -e * dt);
      const double tol = scheme == HartreeScheme::Splitting ? 1e-12 : 1e-6;
      EXPECT_LT(distance(next, expected), tol) << "mode " << m;
    }
  }
}

TEST(HartreeStep, UnitNormPreserved) {
  Rng rng(4);
  const auto g = build_grid(4.0, 16);
  const TrapProtocol trap(TrapKind::LinearRampOff, gaussian_profile(g, 3.0, 1.0), 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto phi = random_orbital(g, rng);
    const auto v = random_even_field(g, rng, 2.0);
    const auto next = hartree_step(phi.field(), trap, v, 0.1, 1e-3);
    EXPECT_LE(std::abs(lp_norm(next, 2.0) - 1.0), 1e-10);
  }
}

TEST(HartreeStep, ZeroStepIsIdentity) {
  Rng rng(5);
  const auto g = build_grid(4.0, 8);
  const auto phi = random_orbital(g, rng);
  const auto next = hartree_step(phi.field(), TrapProtocol::none(g), random_even_field(g, rng), 0.0, 0.0);
  EXPECT_EQ(next.values(), phi.field().values());
}

TEST(HartreeStep, UnstableRk4StepThrows) {
  Rng rng(6);
  const auto g = build_grid(1.0, 32);  // large kinetic eigenvalues
  const auto phi = random_orbital(g, rng);
  EXPECT_THROW(hartree_step(phi.field(), TrapProtocol::none(g), LatticeField::zeros(g), 0.0, 0.05,
                            HartreeScheme::ExplicitRk4),
               InstabilityError);
}

TEST(HartreeStep, SecondOrderSelfConvergence) {
  const auto g = build_grid(8.0, 32);
  const auto phi0 = gaussian_orbital(g, 3.0, 0.8, 1.0);
  const auto v = gaussian_profile(g, 2.0, 0.7);
  const TrapProtocol trap(TrapKind::LinearRampOff, gaussian_profile(g, 1.5, 2.0), 0.6);
  auto run = [&](double dt) {
    return evolve_hartree(phi0, trap, v, HartreeParams{dt, 1.0}).fields.back();
  };
  const auto reference = run(1e-4 / 4);
  const double e1 = distance(run(1e-2), reference);
  const double e2 = distance(run(5e-3), reference);
  const double e3 = distance(run(2.5e-3), reference);
  EXPECT_NEAR(e1 / e2, 4.0, 0.8);
  EXPECT_NEAR(e2 / e3, 4.0, 0.8);
}

TEST(EvolveHartree, EmptyHorizon) {
  const auto g = build_grid(2.0, 8);
  const auto phi = plane_wave(g, 1);
  const auto traj = evolve_hartree(phi, TrapProtocol::none(g), LatticeField::zeros(g), {0.1, 0.0});
  ASSERT_EQ(traj.size(), 1u);
  EXPECT_EQ(traj.fields[0].values(), phi.field().values());
  EXPECT_EQ(traj.times[0], 0.0);
}

TEST(EvolveHartree, FreeEnergyConserved) {
  const auto g = build_grid(8.0, 32);
  const auto phi0 = gaussian_orbital(g, 2.0, 0.7, 0.5);
  const LatticeField harmonic = LatticeField::sample_displacement(g, [](double x) { return Complex(0.5 * x * x); });
  const TrapProtocol trap(TrapKind::Constant, harmonic);
  const auto traj = evolve_hartree(phi0, trap, LatticeField::zeros(g), {1e-4, 1.0});
  const double e0 = single_particle_energy(traj.fields.front(), trap, 0.0);
  for (std::size_t k = 0; k < traj.size(); k += 500)
    EXPECT_NEAR(single_particle_energy(traj.fields[k], trap, traj.times[k]), e0, 1e-8);
}

TEST(EvolveHartree, Reversible) {
  const auto g = build_grid(8.0, 32);
  const auto phi0 = gaussian_orbital(g, 3.0, 0.9, 1.0);
  const auto v = cosine_bump_profile(g, 3.0, 1.5);
  const TrapProtocol trap(TrapKind::LinearRampOff, gaussian_profile(g, 2.0, 2.0), 0.7);
  const double dt = 1e-3;
  const long steps = 1000;
  const auto fwd = evolve_hartree_fields(phi0.field(), trap, v, 0.0, dt, steps);
  const auto back = evolve_hartree_fields(fwd.fields.back(), trap, v, steps * dt, -dt, steps);
  EXPECT_LE(distance(back.fields.back(), phi0.field()), 1e-6);
}

TEST(EvolveHartree, NormConservedOverLongHorizon) {
  const auto g = build_grid(8.0, 16);
  const auto phi0 = gaussian_orbital(g, 1.0, 1.0, 2.0);
  const TrapProtocol trap(TrapKind::Quench, gaussian_profile(g, 2.0, 1.5), 3.0);
  const auto traj = evolve_hartree(phi0, trap, box_profile(g, 4.0, 1.0), {1e-3, 10.0});
  double worst = 0.0;
  for (const auto& f : traj.fields) worst = std::max(worst, std::abs(lp_norm(f, 2.0) - 1.0));
  EXPECT_LE(worst, 1e-9);
}

TEST(EvolveHartree, GaugeCovariance) {
  const auto g = build_grid(6.0, 24);
  const auto phi0 = gaussian_orbital(g, 2.0, 0.8, 1.0);
  const auto v = gaussian_profile(g, 1.5, 0.6);
  const auto base = gaussian_profile(g, 2.0, 1.5);
  const double c = 0.7;
  const TrapProtocol trap(TrapKind::Constant, base);
  const TrapProtocol shifted(TrapKind::Constant,
                             base + LatticeField::constant(g, c));
  const auto a = evolve_hartree(phi0, trap, v, {1e-3, 1.0});
  const auto b = evolve_hartree(phi0, shifted, v, {1e-3, 1.0});
  for (std::size_t k = 0; k < a.size(); k += 100) {
    const LatticeField expected = a.fields[k] * std::polar(1.0, -c * a.times[k]);
    EXPECT_LT(distance(b.fields[k], expected), 1e-10);
    EXPECT_LT((b.fields[k].values().cwiseAbs() - a.fields[k].values().cwiseAbs()).cwiseAbs().maxCoeff(),
              1e-10);
  }
}

TEST(EvolveHartree, LinearWithoutInteraction) {
  Rng rng(7);
  const auto g = build_grid(4.0, 16);
  const TrapProtocol trap(TrapKind::LinearRampOff, gaussian_profile(g, 2.0, 1.0), 0.4);
  const auto v = LatticeField::zeros(g);
  const auto f1 = random_orbital(g, rng).field();
  const auto f2 = random_orbital(g, rng).field();
  const Complex a(0.4, 0.3), b(-1.1, 0.2);
  const auto combined = evolve_hartree_fields(f1 * a + f2 * b, trap, v, 0.0, 1e-3, 500);
  const auto e1 = evolve_hartree_fields(f1, trap, v, 0.0, 1e-3, 500);
  const auto e2 = evolve_hartree_fields(f2, trap, v, 0.0, 1e-3, 500);
  const LatticeField expected = e1.fields.back() * a + e2.fields.back() * b;
  EXPECT_LT(distance(combined.fields.back(), expected), 1e-9);
}

TEST(OrbitalNormSeries, Values) {
  Rng rng(8);
  const auto g = build_grid(4.0, 16);
  const auto flat = Orbital::normalized(LatticeField::constant(g, 1.0));
  const auto flat_traj = evolve_hartree(flat, TrapProtocol::none(g), gaussian_profile(g, 1.0, 0.5), {0.01, 0.5});
  for (double x : orbital_norm_series(flat_traj, kInfinity)) EXPECT_NEAR(x, 1.0 / std::sqrt(4.0), 1e-12);

  const auto phi = random_orbital(g, rng);
  const auto traj = evolve_hartree(phi, TrapProtocol::none(g), random_even_field(g, rng), {0.01, 0.5});
  for (double x : orbital_norm_series(traj, 1.0)) EXPECT_NEAR(x, 1.0, 1e-12);
  const auto s2 = orbital_norm_series(traj, 2.0);
  for (std::size_t k = 0; k < traj.size(); ++k)
    EXPECT_NEAR(s2[k], oracle::lp_norm_extended(traj.fields[k].values(), g.spacing, 4.0), 1e-12);
  EXPECT_THROW(orbital_norm_series(traj, 0.5), InvalidArgument);
}

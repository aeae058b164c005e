#pragma once

// Seeded random orbitals, states, kernels and spectra for property sweeps.

#include <cmath>
#include <random>
#include <vector>

#include "mfcount/counting.hpp"
#include "mfcount/fock.hpp"
#include "mfcount/lattice.hpp"
#include "mfcount/meanfield.hpp"

namespace mfcount {

using Rng = std::mt19937_64;

inline ComplexVector random_complex_vector(Eigen::Index size, Rng& rng) {
  std::normal_distribution<double> normal;
  ComplexVector v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = Complex(normal(rng), normal(rng));
  return v;
}

inline Orbital random_orbital(const GridSpec& grid, Rng& rng) {
  return Orbital::normalized(LatticeField(grid, random_complex_vector(grid.points, rng)));
}

/// Unit vector with normally distributed complex entries.
inline ManyBodyState random_state(const BasisPtr& basis, Rng& rng) {
  return ManyBodyState(basis, random_complex_vector(basis->dimension(), rng)).normalized();
}

/// Product state of phi plus a random perturbation of relative size `epsilon`.
inline ManyBodyState near_condensate_state(const Orbital& phi, const BasisPtr& basis,
                                           double epsilon, Rng& rng) {
  ComplexVector c = product_state(phi, basis).coefficients();
  ComplexVector noise = random_complex_vector(basis->dimension(), rng);
  c += epsilon * noise / noise.norm();
  return ManyBodyState(basis, std::move(c)).normalized();
}

/// Real even kernel with entries uniform in [-amplitude, amplitude].
inline LatticeField random_even_field(const GridSpec& grid, Rng& rng, double amplitude = 1.0) {
  std::uniform_real_distribution<double> uniform(-amplitude, amplitude);
  ComplexVector v(grid.points);
  for (int i = 0; i <= grid.points / 2; ++i) {
    const double x = uniform(rng);
    v[i] = x;
    v[(grid.points - i) % grid.points] = x;
  }
  return LatticeField(grid, std::move(v));
}

/// Dirichlet(concentration, ..., concentration) sample on {0..N}.
inline CountingSpectrum dirichlet_spectrum(int particles, Rng& rng, double concentration = 1.0) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  CountingSpectrum s{std::vector<double>(particles + 1)};
  double total = 0.0;
  for (double& w : s.weights) total += (w = gamma(rng));
  for (double& w : s.weights) w /= total;
  return s;
}

}  // namespace mfcount

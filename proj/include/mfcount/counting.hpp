#pragma once

// Counting machinery relative to a condensate orbital phi: the projectors
// P_{N,k} onto states with exactly k particles outside phi, weighted
// functionals alpha = sum_k n(k) ||P_{N,k} Psi||^2, the operator
// n^ = sum_k (k/N) P_{N,k} and its powers, and the reduced one-particle
// density matrix.
//
// P_{N,k} is diagonal in any mode basis whose first mode is phi: it keeps the
// occupations with n_phi = N - k. All counting operators therefore rotate the
// state into such a basis, act diagonally, and rotate back.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mfcount/errors.hpp"
#include "mfcount/fock.hpp"
#include "mfcount/meanfield.hpp"
#include "mfcount/mode_transform.hpp"

namespace mfcount {

/// Unitary whose first column is the mode vector of phi.
struct AdaptedBasis {
  ComplexMatrix unitary;
  GridSpec grid;
};

/// Householder completion: U = Q diag(-e^{i theta}, 1, ..., 1) where Q is the
/// reflection taking u to -e^{i theta} e_1 and theta = arg u_0.
inline AdaptedBasis adapted_basis(const Orbital& phi) {
  const ComplexVector u = phi.mode_vector();
  const int m = static_cast<int>(u.size());
  const Complex phase = std::abs(u[0]) > 0.0 ? u[0] / std::abs(u[0]) : Complex(1.0);
  ComplexVector w = u;
  w[0] += phase * u.norm();
  ComplexMatrix q = ComplexMatrix::Identity(m, m) - (2.0 / w.squaredNorm()) * (w * w.adjoint());
  q.col(0) *= -phase;
  return {q, phi.grid()};
}

enum class WeightFamily { Linear, Power, Truncated, Custom };

/// Weight n : {0..N} -> [0, inf), materialized as a table.
class WeightSpec {
 public:
  static WeightSpec linear(int particles) {
    require(particles >= 1, "weight needs N >= 1");
    std::vector<double> t(particles + 1);
    for (int k = 0; k <= particles; ++k) t[k] = static_cast<double>(k) / particles;
    return WeightSpec(WeightFamily::Linear, 1.0, std::move(t));
  }

  /// (k/N)^j for j > 0.
  static WeightSpec power(int particles, double exponent) {
    require(particles >= 1, "weight needs N >= 1");
    require(exponent > 0.0, "power weight needs a positive exponent");
    std::vector<double> t(particles + 1);
    for (int k = 0; k <= particles; ++k)
      t[k] = std::pow(static_cast<double>(k) / particles, exponent);
    return WeightSpec(WeightFamily::Power, exponent, std::move(t));
  }

  /// k / N^gamma for k <= N^gamma, zero above.
  static WeightSpec truncated(int particles, double gamma) {
    require(particles >= 1, "weight needs N >= 1");
    require(gamma > 0.0 && gamma < 1.0, "truncated weight needs 0 < gamma < 1");
    const double cutoff = std::pow(static_cast<double>(particles), gamma);
    std::vector<double> t(particles + 1);
    for (int k = 0; k <= particles; ++k)
      t[k] = k <= cutoff * (1.0 + 1e-12) ? k / cutoff : 0.0;
    return WeightSpec(WeightFamily::Truncated, gamma, std::move(t));
  }

  static WeightSpec custom(std::vector<double> table) {
    require(table.size() >= 2, "custom weight needs N + 1 >= 2 entries");
    for (double x : table) require(x >= 0.0 && std::isfinite(x), "weights must be >= 0");
    return WeightSpec(WeightFamily::Custom, 0.0, std::move(table));
  }

  WeightFamily family() const { return family_; }
  double parameter() const { return parameter_; }
  const std::vector<double>& table() const { return table_; }
  int particles() const { return static_cast<int>(table_.size()) - 1; }
  double operator()(int k) const { return table_.at(k); }

  std::string name() const {
    switch (family_) {
      case WeightFamily::Linear: return "linear";
      case WeightFamily::Power: return "power" + format_parameter();
      case WeightFamily::Truncated: return "truncated" + format_parameter();
      case WeightFamily::Custom: return "custom";
    }
    return "weight";
  }

  /// m <= n pointwise.
  bool dominated_by(const WeightSpec& other) const {
    if (other.table_.size() != table_.size()) return false;
    for (std::size_t k = 0; k < table_.size(); ++k)
      if (table_[k] > other.table_[k]) return false;
    return true;
  }

 private:
  WeightSpec(WeightFamily family, double parameter, std::vector<double> table)
      : family_(family), parameter_(parameter), table_(std::move(table)) {}

  std::string format_parameter() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", parameter_);
    return buf;
  }

  WeightFamily family_;
  double parameter_;
  std::vector<double> table_;
};

/// w_k = ||P_{N,k} Psi||^2 for k = 0..N.
struct CountingSpectrum {
  std::vector<double> weights;

  int particles() const { return static_cast<int>(weights.size()) - 1; }
  double total() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }

  /// sum_k n(k) w_k
  double expectation(const std::function<double(int)>& n) const {
    double s = 0.0;
    for (int k = 0; k <= particles(); ++k) s += n(k) * weights[k];
    return s;
  }

  double moment(double exponent) const {
    return expectation([&](int k) {
      return k == 0 ? 0.0 : std::pow(static_cast<double>(k) / particles(), exponent);
    });
  }
};

namespace detail {

inline void require_compatible(const ManyBodyState& psi, const GridSpec& grid) {
  require(psi.modes() == grid.points, "orbital grid does not match the state's modes");
}

}  // namespace detail

inline CountingSpectrum counting_spectrum(const ManyBodyState& psi, const AdaptedBasis& adapted) {
  detail::require_compatible(psi, adapted.grid);
  psi.require_normalized();
  const ComplexVector rotated =
      transform_modes(psi.basis(), psi.coefficients(), adapted.unitary);
  const int n = psi.particles();
  CountingSpectrum spec{std::vector<double>(n + 1, 0.0)};
  for (std::size_t s = 0; s < psi.basis().dimension(); ++s)
    spec.weights[n - psi.basis().occupation(s)[0]] += std::norm(rotated[s]);
  return spec;
}

inline CountingSpectrum counting_spectrum(const ManyBodyState& psi, const Orbital& phi) {
  return counting_spectrum(psi, adapted_basis(phi));
}

inline double alpha(const CountingSpectrum& spectrum, const WeightSpec& weight) {
  require(weight.particles() == spectrum.particles(), "weight table must have N + 1 entries");
  return spectrum.expectation([&](int k) { return weight(k); });
}

inline double alpha(const ManyBodyState& psi, const Orbital& phi, const WeightSpec& weight) {
  return alpha(counting_spectrum(psi, phi), weight);
}

/// sum_k f(k) P_{N,k} Psi; no normalization is required or applied.
inline ManyBodyState apply_counting_function(const ManyBodyState& psi, const Orbital& phi,
                                             const std::function<double(int)>& f) {
  detail::require_compatible(psi, phi.grid());
  const AdaptedBasis adapted = adapted_basis(phi);
  ComplexVector rotated = transform_modes(psi.basis(), psi.coefficients(), adapted.unitary);
  const int n = psi.particles();
  for (std::size_t s = 0; s < psi.basis().dimension(); ++s)
    rotated[s] *= f(n - psi.basis().occupation(s)[0]);
  return ManyBodyState(psi.basis_ptr(),
                       transform_modes(psi.basis(), rotated, adapted.unitary.adjoint()));
}

/// n^ Psi = sum_k (k/N) P_{N,k} Psi
inline ManyBodyState nhat_apply(const ManyBodyState& psi, const Orbital& phi) {
  const double n = psi.particles();
  return apply_counting_function(psi, phi, [n](int k) { return k / n; });
}

/// (n^)^j Psi; for j < 0 the k = 0 sector is annihilated.
inline ManyBodyState nhat_power(const ManyBodyState& psi, const Orbital& phi, double j) {
  require(j != 0.0, "n^ power needs j != 0");
  const double n = psi.particles();
  return apply_counting_function(psi, phi, [n, j](int k) {
    if (k == 0) return 0.0;
    return std::pow(k / n, j);
  });
}

/// <a_i^+ a_j> over the site modes.
inline ComplexMatrix one_body_correlation(const ManyBodyState& psi) {
  const FockBasis& basis = psi.basis();
  const ComplexVector& c = psi.coefficients();
  const int m = basis.modes();
  ComplexMatrix g = ComplexMatrix::Zero(m, m);
  std::vector<int> scratch;
  for (std::size_t s = 0; s < basis.dimension(); ++s) {
    if (c[s] == Complex(0.0)) continue;
    const auto occ = basis.occupation(s);
    for (int j = 0; j < m; ++j) {
      if (occ[j] == 0) continue;
      g(j, j) += std::norm(c[s]) * static_cast<double>(occ[j]);
      for (int i = 0; i < m; ++i) {
        if (i == j) continue;
        const std::size_t t = detail::hop_index(basis, occ, i, j, scratch);
        g(i, j) += std::conj(c[t]) * c[s] * std::sqrt(static_cast<double>(occ[j]) * (occ[i] + 1.0));
      }
    }
  }
  return g;
}

/// Unit-trace one-particle density matrix mu(x, y) = int Psi(x, ..) Psi*(y, ..),
/// as an M x M matrix in the sqrt(h)-weighted site basis.
struct ReducedDensity {
  ComplexMatrix matrix;

  void validate(double tol = 1e-10) const {
    const double herm = (matrix - matrix.adjoint()).cwiseAbs().maxCoeff();
    require(herm <= 1e-12, "reduced density is not Hermitian");
    require(std::abs(matrix.trace() - Complex(1.0)) <= tol, "reduced density trace is not 1");
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(matrix, Eigen::EigenvaluesOnly);
    require(eig.eigenvalues().minCoeff() >= -tol, "reduced density is not positive");
  }
};

inline ReducedDensity reduced_density(const ManyBodyState& psi) {
  ComplexMatrix mu = one_body_correlation(psi).transpose() / static_cast<double>(psi.particles());
  // Symmetrize away rounding.
  mu = 0.5 * (mu + mu.adjoint()).eval();
  ReducedDensity rd{std::move(mu)};
  rd.validate();
  return rd;
}

/// ||q_1 Psi||^2 = 1 - <phi, mu_1 phi>
inline double q1_norm_squared(const ManyBodyState& psi, const Orbital& phi) {
  detail::require_compatible(psi, phi.grid());
  const ComplexVector u = phi.mode_vector();
  const ComplexMatrix g = one_body_correlation(psi);
  // <a^+(u) a(u)> = sum_ij u_i conj(u_j) <a_i^+ a_j>
  const Complex occupancy = u.transpose() * g * u.conjugate();
  return psi.coefficients().squaredNorm() - occupancy.real() / psi.particles();
}

/// Split of mu_1 by p_1/q_1 on each side: mu = pp + qp + pq + qq.
struct MuDecomposition {
  ComplexMatrix pp, qp, pq, qq;

  ComplexMatrix sum() const { return pp + qp + pq + qq; }
};

inline MuDecomposition mu_decomposition(const ManyBodyState& psi, const Orbital& phi) {
  detail::require_compatible(psi, phi.grid());
  const ComplexMatrix mu = reduced_density(psi).matrix;
  const ComplexVector u = phi.mode_vector();
  const ComplexMatrix p = u * u.adjoint();
  const ComplexMatrix q = ComplexMatrix::Identity(u.size(), u.size()) - p;
  return {p * mu * p, q * mu * p, p * mu * q, q * mu * q};
}

inline double operator_norm(const ComplexMatrix& a) {
  Eigen::JacobiSVD<ComplexMatrix> svd(a);
  return svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
}

enum class DensityNorm { Operator, Trace };

/// ||mu - |phi><phi|||, operator (largest singular value) or trace (sum).
inline double density_distance(const ReducedDensity& mu, const Orbital& phi, DensityNorm norm) {
  const ComplexVector u = phi.mode_vector();
  require(u.size() == mu.matrix.rows(), "orbital does not match density matrix size");
  const ComplexMatrix diff = mu.matrix - u * u.adjoint();
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(0.5 * (diff + diff.adjoint()),
                                                   Eigen::EigenvaluesOnly);
  const RealVector s = eig.eigenvalues().cwiseAbs();
  return norm == DensityNorm::Operator ? s.maxCoeff() : s.sum();
}

}  // namespace mfcount

#pragma once

// Change of single-particle basis for symmetric Fock states.
//
// A state is a homogeneous polynomial in the creation operators a_i^+. For new
// modes b_k^+ = sum_i U_ik a_i^+ (columns of U), substituting
// a_i^+ = sum_k conj(U_ik) b_k^+ rewrites the polynomial in the new modes. The
// substitution matrix conj(U) is factored into two-mode Givens rotations and a
// diagonal phase, each of which acts block-wise on pairs of occupations.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

#include "mfcount/errors.hpp"
#include "mfcount/fock_basis.hpp"
#include "mfcount/lattice.hpp"

namespace mfcount {

namespace detail {

struct TwoModeSubstitution {
  int a = 0;
  int b = 0;
  Eigen::Matrix2cd block;  // x_a = s00 y_a + s01 y_b, x_b = s10 y_a + s11 y_b
};

struct SubstitutionFactors {
  std::vector<TwoModeSubstitution> rotations;  // applied in order
  ComplexVector phases;                        // applied last
};

/// Factors W = G_1^+ ... G_K^+ D by Givens elimination of W's lower triangle.
inline SubstitutionFactors factor_substitution(ComplexMatrix w) {
  const int m = static_cast<int>(w.rows());
  SubstitutionFactors f;
  for (int c = 0; c + 1 < m; ++c) {
    for (int r = m - 1; r > c; --r) {
      const Complex x = w(r - 1, c);
      const Complex y = w(r, c);
      if (y == Complex(0.0)) continue;
      const double rho = std::hypot(std::abs(x), std::abs(y));
      Eigen::Matrix2cd g;
      g << std::conj(x) / rho, std::conj(y) / rho, -y / rho, x / rho;
      const Eigen::MatrixXcd rows = w.middleRows(r - 1, 2);
      w.middleRows(r - 1, 2) = g * rows;
      f.rotations.push_back({r - 1, r, g.adjoint()});
    }
  }
  f.phases = w.diagonal();
  return f;
}

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Matrix B_s(m, p): coefficient of the normalized monomial (m, s-m) produced
/// by substituting into (p, s-p).
inline ComplexMatrix two_mode_block(const Eigen::Matrix2cd& s, int total) {
  auto powers = [total](Complex z) {
    std::vector<Complex> p(total + 1);
    p[0] = 1.0;
    for (int k = 1; k <= total; ++k) p[k] = p[k - 1] * z;
    return p;
  };
  const auto paa = powers(s(0, 0)), pab = powers(s(0, 1)), pba = powers(s(1, 0)),
             pbb = powers(s(1, 1));
  std::vector<double> fact(total + 1, 1.0);
  for (int k = 1; k <= total; ++k) fact[k] = fact[k - 1] * k;

  ComplexMatrix b = ComplexMatrix::Zero(total + 1, total + 1);
  for (int p = 0; p <= total; ++p) {
    const int q = total - p;
    const double norm_in = std::sqrt(fact[p] * fact[q]);
    for (int i = 0; i <= p; ++i) {
      const Complex left = binomial(p, i) * paa[i] * pab[p - i];
      for (int j = 0; j <= q; ++j) {
        const int m = i + j;
        b(m, p) += left * binomial(q, j) * pba[j] * pbb[q - j] *
                   std::sqrt(fact[m] * fact[total - m]) / norm_in;
      }
    }
  }
  return b;
}

inline ComplexVector apply_two_mode(const FockBasis& basis, const ComplexVector& c,
                                    const TwoModeSubstitution& sub) {
  const int n = basis.particles();
  std::vector<ComplexMatrix> blocks(n + 1);
  for (int total = 0; total <= n; ++total) blocks[total] = two_mode_block(sub.block, total);

  ComplexVector out = ComplexVector::Zero(c.size());
  std::vector<int> occ(basis.modes());
  for (std::size_t s = 0; s < basis.dimension(); ++s) {
    if (c[s] == Complex(0.0)) continue;
    const auto o = basis.occupation(s);
    occ.assign(o.begin(), o.end());
    const int p = occ[sub.a];
    const int total = p + occ[sub.b];
    const ComplexMatrix& blk = blocks[total];
    for (int m = 0; m <= total; ++m) {
      const Complex amp = blk(m, p);
      if (amp == Complex(0.0)) continue;
      occ[sub.a] = m;
      occ[sub.b] = total - m;
      out[basis.index_of(std::span<const int>(occ))] += amp * c[s];
    }
  }
  return out;
}

}  // namespace detail

/// Coefficients of the same state in the mode basis given by the columns of
/// the unitary `new_modes` (expressed in the current modes).
inline ComplexVector transform_modes(const FockBasis& basis, const ComplexVector& coefficients,
                                     const ComplexMatrix& new_modes) {
  require(new_modes.rows() == basis.modes() && new_modes.cols() == basis.modes(),
          "mode transform has the wrong shape");
  const double defect =
      (new_modes.adjoint() * new_modes - ComplexMatrix::Identity(basis.modes(), basis.modes()))
          .cwiseAbs()
          .maxCoeff();
  require(defect <= 1e-10, "mode transform is not unitary");

  const auto factors = detail::factor_substitution(new_modes.conjugate());
  ComplexVector c = coefficients;
  for (const auto& rot : factors.rotations) c = detail::apply_two_mode(basis, c, rot);
  for (std::size_t s = 0; s < basis.dimension(); ++s) {
    const auto occ = basis.occupation(s);
    for (int k = 0; k < basis.modes(); ++k)
      for (int e = 0; e < occ[k]; ++e) c[s] *= factors.phases[k];
  }
  return c;
}

}  // namespace mfcount

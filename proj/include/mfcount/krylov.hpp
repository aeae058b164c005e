#pragma once

// Lanczos approximation of exp(-i tau H) v for Hermitian H, with an a-posteriori
// error estimate driving the subspace size and recursive substepping.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "mfcount/errors.hpp"

namespace mfcount {

struct KrylovOptions {
  double tolerance = 1e-12;
  int max_dimension = 40;
  int max_halvings = 12;
};

namespace detail {

/// exp(-i tau T) e_1 for a real symmetric tridiagonal T given by its diagonal
/// and off-diagonal.
inline Eigen::VectorXcd tridiagonal_expm_e1(const std::vector<double>& diag,
                                            const std::vector<double>& offdiag, double tau) {
  const int m = static_cast<int>(diag.size());
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) t(i, i) = diag[i];
  for (int i = 0; i + 1 < m; ++i) t(i, i + 1) = t(i + 1, i) = offdiag[i];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(t);
  const Eigen::MatrixXd& q = eig.eigenvectors();
  Eigen::VectorXcd coeff(m);
  for (int k = 0; k < m; ++k)
    coeff[k] = std::polar(1.0, -tau * eig.eigenvalues()[k]) * q(0, k);
  return q.cast<std::complex<double>>() * coeff;
}

}  // namespace detail

using HermitianApply = std::function<Eigen::VectorXcd(const Eigen::VectorXcd&)>;

/// One Krylov step; returns false if the tolerance was not reached.
inline bool krylov_expm_once(const HermitianApply& apply, const Eigen::VectorXcd& v, double tau,
                             const KrylovOptions& opts, Eigen::VectorXcd& out) {
  const double beta0 = v.norm();
  if (beta0 == 0.0 || tau == 0.0) {
    out = v;
    return true;
  }
  const int max_m = std::min<int>(opts.max_dimension, static_cast<int>(v.size()));
  std::vector<Eigen::VectorXcd> basis;
  std::vector<double> alpha, beta;
  basis.push_back(v / beta0);

  for (int j = 0; j < max_m; ++j) {
    Eigen::VectorXcd w = apply(basis[j]);
    alpha.push_back(basis[j].dot(w).real());
    // Full reorthogonalization; the subspaces are tiny.
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) w -= q.dot(w) * q;
    const double b = w.norm();

    const Eigen::VectorXcd y = detail::tridiagonal_expm_e1(alpha, beta, tau);
    const bool invariant = b <= 1e-14 * std::max(1.0, std::abs(alpha.back()));
    const double err = beta0 * b * std::abs(y[j]);
    if (invariant || err < opts.tolerance || j + 1 == static_cast<int>(v.size())) {
      out = Eigen::VectorXcd::Zero(v.size());
      for (int k = 0; k <= j; ++k) out += y[k] * basis[k];
      out *= beta0;
      return true;
    }
    beta.push_back(b);
    basis.push_back(w / b);
  }
  return false;
}

/// exp(-i tau H) v, halving tau until each substep meets the tolerance.
inline Eigen::VectorXcd krylov_expm(const HermitianApply& apply, const Eigen::VectorXcd& v,
                                    double tau, const KrylovOptions& opts = {}) {
  for (int level = 0; level <= opts.max_halvings; ++level) {
    const long pieces = 1L << level;
    const double sub = tau / static_cast<double>(pieces);
    Eigen::VectorXcd state = v;
    bool ok = true;
    for (long p = 0; p < pieces && ok; ++p) {
      Eigen::VectorXcd next;
      ok = krylov_expm_once(apply, state, sub, opts, next);
      state = std::move(next);
    }
    if (ok) return state;
  }
  throw InstabilityError("Krylov propagator did not reach tolerance " +
                         std::to_string(opts.tolerance) + "; reduce dt");
}

}  // namespace mfcount

#pragma once

// Derivative functional gamma = i <Psi, [H_N - H^H_N, n^] Psi>, the constants
// C^phi = ||v||_{2r} ||phi||_{2s}, and the bound checks built on them: the
// uniform estimate |gamma| <= 10 C^phi (alpha + 1/N), the Gronwall envelope
// for alpha(t), d alpha/dt = gamma along coupled runs, and the condensation
// equivalences between alpha and the reduced density matrix.
//
// Functions taking `v_scaled` expect the pair potential of the N-body
// Hamiltonian, v/N; the Hartree kernel is recovered as N * v_scaled.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <string>
#include <vector>

#include "mfcount/counting.hpp"
#include "mfcount/errors.hpp"
#include "mfcount/fock.hpp"
#include "mfcount/lattice.hpp"
#include "mfcount/meanfield.hpp"

namespace mfcount {

struct BoundCheck {
  double time = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;  // rhs - lhs
  double tolerance = 0.0;
  bool passed = true;
};

inline BoundCheck make_check(double time, double lhs, double rhs, double tolerance) {
  const double margin = rhs - lhs;
  return {time, lhs, rhs, margin, tolerance, margin >= -tolerance};
}

/// Hartree kernel v from the N-body pair potential v/N.
inline LatticeField hartree_kernel(const LatticeField& v_scaled, int particles) {
  return v_scaled * Complex(static_cast<double>(particles));
}

/// Diagonal of H_N - H^H_N in the site Fock basis: pair interaction minus
/// sum_l (v * |phi|^2)(x_l). Kinetic and trap terms cancel.
inline RealVector interaction_minus_mean_field(const FockBasis& basis, const Orbital& phi,
                                               const LatticeField& v_scaled) {
  const RealVector mean_field =
      mean_field_potential(phi, hartree_kernel(v_scaled, basis.particles()));
  return pair_interaction_diagonal(basis, v_scaled) - one_body_diagonal(basis, mean_field);
}

struct GammaResult {
  double value = 0.0;               // i <[W, n^]> from the full commutator
  double imaginary_residual = 0.0;  // |Im| of the same expectation
  double reduced_value = 0.0;       // -2 Im <Psi, p_1 V(x_1, x_2) q_1 Psi>
};

namespace detail {

/// -2 Im <Psi, p_1 V(x_1, x_2) q_1 Psi> with
/// V(x_1, x_2) = (N-1) v_scaled(x_2 - x_1) - (v * |phi|^2)(x_1), evaluated
/// through the contraction R_abc = <a_a^+ a_b^+ a_b a_c>.
inline double gamma_reduced(const ManyBodyState& psi, const Orbital& phi,
                            const LatticeField& v_scaled, const RealVector& mean_field) {
  const FockBasis& basis = psi.basis();
  const ComplexVector& c = psi.coefficients();
  const int m = basis.modes();
  const int n = basis.particles();
  const ComplexVector u = phi.mode_vector();
  const ComplexMatrix p = u * u.adjoint();
  const ComplexMatrix q = ComplexMatrix::Identity(m, m) - p;

  if (n == 1) {
    const ComplexMatrix a = p * (-mean_field).cast<Complex>().asDiagonal() * q;
    const ComplexMatrix g = one_body_correlation(psi);
    return -2.0 * (a.cwiseProduct(g)).sum().imag();
  }

  const RealVector vr = v_scaled.values().real();
  // r[(a * m + b) * m + c] = <a_a^+ n_b a_c>
  std::vector<Complex> r(static_cast<std::size_t>(m) * m * m, 0.0);
  std::vector<int> occ(m);
  for (std::size_t s = 0; s < basis.dimension(); ++s) {
    if (c[s] == Complex(0.0)) continue;
    const auto o = basis.occupation(s);
    for (int cc = 0; cc < m; ++cc) {
      if (o[cc] == 0) continue;
      occ.assign(o.begin(), o.end());
      const double amp_c = std::sqrt(static_cast<double>(occ[cc]));
      --occ[cc];
      for (int a = 0; a < m; ++a) {
        const double amp_a = std::sqrt(occ[a] + 1.0);
        ++occ[a];
        const std::size_t t = basis.index_of(std::span<const int>(occ));
        --occ[a];
        const Complex base = std::conj(c[t]) * c[s] * amp_c * amp_a;
        for (int b = 0; b < m; ++b)
          if (occ[b] != 0) r[(static_cast<std::size_t>(a) * m + b) * m + cc] += base * double(occ[b]);
      }
    }
  }

  Complex total = 0.0;
  for (int b = 0; b < m; ++b) {
    RealVector v_col(m);
    for (int e = 0; e < m; ++e) v_col[e] = (n - 1) * vr[(b - e + m) % m] - mean_field[e];
    const ComplexMatrix k = p * v_col.cast<Complex>().asDiagonal() * q;
    for (int a = 0; a < m; ++a)
      for (int cc = 0; cc < m; ++cc)
        total += k(a, cc) * r[(static_cast<std::size_t>(a) * m + b) * m + cc];
  }
  return -2.0 * (total / (static_cast<double>(n) * (n - 1))).imag();
}

}  // namespace detail

inline GammaResult gamma_details(const ManyBodyState& psi, const Orbital& phi,
                                 const LatticeField& v_scaled) {
  require(psi.modes() == phi.grid().points, "orbital grid does not match the state's modes");
  const RealVector w = interaction_minus_mean_field(psi.basis(), phi, v_scaled);
  const ComplexVector& c = psi.coefficients();
  const ComplexVector wc = w.cast<Complex>().cwiseProduct(c);
  const ComplexVector n_c = nhat_apply(psi, phi).coefficients();
  const ComplexVector n_wc =
      nhat_apply(ManyBodyState(psi.basis_ptr(), wc), phi).coefficients();
  // <Psi, W n^ Psi> - <Psi, n^ W Psi>
  const Complex commutator = wc.dot(n_c) - c.dot(n_wc);
  // i<[W, n^]> is d alpha/dt for i dPsi/dt = H Psi, i dphi/dt = h^H phi.
  const Complex value = Complex(0.0, 1.0) * commutator;

  const RealVector mean_field =
      mean_field_potential(phi, hartree_kernel(v_scaled, psi.particles()));
  return {value.real(), std::abs(value.imag()),
          detail::gamma_reduced(psi, phi, v_scaled, mean_field)};
}

inline double gamma(const ManyBodyState& psi, const Orbital& phi, const LatticeField& v_scaled) {
  return gamma_details(psi, phi, v_scaled).value;
}

/// Hoelder conjugate s = r / (r - 1); r = 1 gives infinity.
inline double conjugate_exponent(double r) {
  if (r == 1.0) return kInfinity;
  if (std::isinf(r)) return 1.0;
  return r / (r - 1.0);
}

/// ||v||_{2r} ||phi||_{2s}
inline double c_phi(const LatticeField& v, const Orbital& phi, double r) {
  require(r >= 1.0, "C^phi needs r >= 1");
  const double s = conjugate_exponent(r);
  return lp_norm(v, 2.0 * r) * lp_norm(phi.field(), 2.0 * s);
}

inline constexpr double kLemma2Tolerance = 1e-9;

/// |gamma| <= 10 C^phi (alpha + 1/N), linear weight.
inline BoundCheck lemma2_check(const ManyBodyState& psi, const Orbital& phi,
                               const LatticeField& v_scaled, double r, double time = 0.0) {
  const int n = psi.particles();
  const double g = gamma(psi, phi, v_scaled);
  const double a = alpha(psi, phi, WeightSpec::linear(n));
  const double c = c_phi(hartree_kernel(v_scaled, n), phi, r);
  return make_check(time, std::abs(g), 10.0 * c * (a + 1.0 / n), kLemma2Tolerance);
}

/// e^{I(t)} alpha_0 + (e^{I(t)} - 1) / N with I(t) the trapezoidal integral of C.
inline std::vector<double> gronwall_bound(double alpha0, const std::vector<double>& c_t,
                                          const std::vector<double>& times, int particles) {
  require(c_t.size() == times.size(), "C^t series and time axis differ in length");
  require(particles >= 1, "Gronwall bound needs N >= 1");
  std::vector<double> bound(times.size());
  double integral = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    require(c_t[k] >= 0.0, "C^t must be non-negative");
    if (k > 0) integral += 0.5 * (c_t[k - 1] + c_t[k]) * (times[k] - times[k - 1]);
    const double growth = std::expm1(integral);
    bound[k] = alpha0 + growth * alpha0 + growth / particles;
  }
  return bound;
}

/// Time series needed for the d alpha/dt = gamma check.
struct DynamicsSamples {
  std::vector<double> times;
  std::vector<double> alpha;
  std::vector<double> gamma;
};

/// |(alpha(t+dt) - alpha(t-dt)) / 2dt - gamma(t)| at interior samples, indexed like `times`
/// (endpoints hold NaN). Assumes a uniform time axis.
inline std::vector<double> derivative_residuals(const DynamicsSamples& run) {
  const std::size_t n = run.times.size();
  require(run.alpha.size() == n && run.gamma.size() == n, "series lengths differ");
  std::vector<double> res(n, std::nan(""));
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double slope = (run.alpha[k + 1] - run.alpha[k - 1]) / (run.times[k + 1] - run.times[k - 1]);
    res[k] = std::abs(slope - run.gamma[k]);
  }
  return res;
}

struct DerivativeCheck {
  std::vector<BoundCheck> points;  // one per coarse interior sample
  double coarse_residual = 0.0;    // max over the common sample times
  double fine_residual = 0.0;
  double ratio = 0.0;
  bool passed = false;
};

inline constexpr double kDerivativeRatio = 4.0;
inline constexpr double kDerivativeRatioTolerance = 0.2;

/// Compares a run at step dt with one at dt/2 over the coarse run's interior
/// times. The residual must scale like dt^2: ratio 4 within 20%. Residuals
/// below `floor` in both runs count as exact agreement.
inline DerivativeCheck alpha_derivative_check(const DynamicsSamples& coarse,
                                              const DynamicsSamples& fine, double floor = 1e-9) {
  require(coarse.times.size() >= 3 && fine.times.size() >= 3, "runs need at least 3 samples");
  const double dt_c = coarse.times[1] - coarse.times[0];
  const double dt_f = fine.times[1] - fine.times[0];
  const double refinement = dt_c / dt_f;
  require(std::abs(refinement - 2.0) < 1e-9, "fine run must use half the coarse step");

  const auto rc = derivative_residuals(coarse);
  const auto rf = derivative_residuals(fine);
  DerivativeCheck out;
  for (std::size_t k = 1; k + 1 < coarse.times.size(); ++k) {
    const std::size_t j = 2 * k;
    if (j + 1 >= fine.times.size()) break;
    out.coarse_residual = std::max(out.coarse_residual, rc[k]);
    out.fine_residual = std::max(out.fine_residual, rf[j]);
  }
  const double predicted = refinement * refinement * (1.0 + kDerivativeRatioTolerance);
  for (std::size_t k = 1; k + 1 < coarse.times.size(); ++k)
    out.points.push_back(
        make_check(coarse.times[k], rc[k], predicted * out.fine_residual, floor));

  if (out.coarse_residual <= floor && out.fine_residual <= floor) {
    out.ratio = kDerivativeRatio;
    out.passed = true;
  } else {
    out.ratio = out.fine_residual > 0.0 ? out.coarse_residual / out.fine_residual : kInfinity;
    out.passed = std::abs(out.ratio - kDerivativeRatio) <= kDerivativeRatioTolerance * kDerivativeRatio;
  }
  return out;
}

inline constexpr double kInterpolationTolerance = 1e-10;

/// sum (k/N)^l w_k <= delta^{l/(2j)} + sqrt(delta) with delta = sum (k/N)^j w_k.
inline BoundCheck lemma1_interpolation_check(const CountingSpectrum& spectrum, double j, double l) {
  require(j > 0.0 && l > 0.0, "interpolation exponents must be positive");
  const double delta = spectrum.moment(j);
  const double lhs = spectrum.moment(l);
  const double root = std::sqrt(std::max(delta, 0.0));
  return make_check(0.0, lhs, std::pow(root, l / j) + root, kInterpolationTolerance);
}

struct CondensationReport {
  double alpha_linear = 0.0;
  double condensate_overlap = 0.0;  // <phi, mu_1 phi>
  double operator_distance = 0.0;
  double trace_distance = 0.0;
  BoundCheck operator_bound;        // op distance <= 2 sqrt(alpha) + 2 alpha
  double identity_residual = 0.0;   // |1 - <phi, mu phi> - alpha|
  bool identity_passed = true;

  bool passed() const { return operator_bound.passed && identity_passed; }
};

inline CondensationReport condensation_equivalence_report(const ManyBodyState& psi,
                                                          const Orbital& phi, double time = 0.0) {
  CondensationReport r;
  r.alpha_linear = alpha(psi, phi, WeightSpec::linear(psi.particles()));
  const ReducedDensity mu = reduced_density(psi);
  const ComplexVector u = phi.mode_vector();
  r.condensate_overlap = u.dot(mu.matrix * u).real();
  r.operator_distance = density_distance(mu, phi, DensityNorm::Operator);
  r.trace_distance = density_distance(mu, phi, DensityNorm::Trace);
  r.operator_bound = make_check(time, r.operator_distance,
                                2.0 * std::sqrt(std::max(r.alpha_linear, 0.0)) + 2.0 * r.alpha_linear,
                                1e-9);
  r.identity_residual = std::abs(1.0 - r.condensate_overlap - r.alpha_linear);
  r.identity_passed = r.identity_residual <= 1e-10;
  return r;
}

namespace detail {

/// Applies a single-particle matrix to tensor index `slot`.
inline ComplexVector apply_on_slot(const FirstQuantizedTensor& t, const ComplexVector& data,
                                   int slot, const ComplexMatrix& op) {
  const std::size_t m = t.modes;
  std::size_t stride = 1;
  for (int j = slot + 1; j < t.particles; ++j) stride *= m;
  const std::size_t block = stride * m;
  ComplexVector out = ComplexVector::Zero(data.size());
  for (std::size_t base = 0; base < t.size(); base += block)
    for (std::size_t inner = 0; inner < stride; ++inner)
      for (std::size_t a = 0; a < m; ++a) {
        Complex acc = 0.0;
        for (std::size_t b = 0; b < m; ++b) acc += op(a, b) * data[base + b * stride + inner];
        out[base + a * stride + inner] = acc;
      }
  return out;
}

}  // namespace detail

/// w_k from P_{N,k} = sum over a in {0,1}^N with |a| = k of prod_j p_j^{1-a_j} q_j^{a_j},
/// applied directly to the first-quantized tensor.
inline CountingSpectrum brute_force_spectrum(const FirstQuantizedTensor& t, const Orbital& phi) {
  require(phi.grid().points == t.modes, "orbital grid does not match tensor modes");
  require(t.particles <= 20, "brute-force projector sum limited to N <= 20");
  const ComplexVector u = phi.mode_vector();
  const ComplexMatrix p = u * u.adjoint();
  const ComplexMatrix q = ComplexMatrix::Identity(t.modes, t.modes) - p;
  const int n = t.particles;
  std::vector<ComplexVector> projected(n + 1, ComplexVector::Zero(t.data.size()));
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    ComplexVector term = t.data;
    for (int j = 0; j < n; ++j) term = detail::apply_on_slot(t, term, j, (mask >> j) & 1u ? q : p);
    projected[std::popcount(mask)] += term;
  }
  CountingSpectrum spec{std::vector<double>(n + 1)};
  for (int k = 0; k <= n; ++k) spec.weights[k] = projected[k].squaredNorm();
  return spec;
}

inline double brute_force_alpha(const FirstQuantizedTensor& t, const Orbital& phi,
                                const WeightSpec& weight) {
  return alpha(brute_force_spectrum(t, phi), weight);
}

}  // namespace mfcount

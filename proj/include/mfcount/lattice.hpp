#pragma once

// Periodic one-dimensional lattice: grid description, sampled fields, the
// discrete kinetic operator, h-weighted L^p norms and periodic convolution.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <string>

#include "mfcount/errors.hpp"

namespace mfcount {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Periodic grid of `points` sites x_i = i * spacing on a box of size `length`.
struct GridSpec {
  double length = 1.0;
  int points = 2;
  double spacing = 0.5;

  double position(int site) const { return site * spacing; }

  /// Minimum-image displacement of site `site` from the origin, in (-L/2, L/2].
  double displacement(int site) const {
    double x = position(site);
    if (x > 0.5 * length) x -= length;
    return x;
  }

  int wrap(long site) const {
    long m = site % points;
    return static_cast<int>(m < 0 ? m + points : m);
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline GridSpec build_grid(double length, int points) {
  require(std::isfinite(length) && length > 0.0, "grid length must be positive");
  require(points >= 2, "grid needs at least 2 points");
  return GridSpec{length, points, length / points};
}

/// Complex field sampled at every grid site.
class LatticeField {
 public:
  LatticeField() = default;

  LatticeField(GridSpec grid, ComplexVector values) : grid_(grid), values_(std::move(values)) {
    require(values_.size() == grid_.points, "field size does not match grid");
  }

  static LatticeField zeros(const GridSpec& grid) {
    return LatticeField(grid, ComplexVector::Zero(grid.points));
  }

  static LatticeField constant(const GridSpec& grid, Complex c) {
    return LatticeField(grid, ComplexVector::Constant(grid.points, c));
  }

  /// Samples `f` at the site positions x_i = i h.
  static LatticeField sample(const GridSpec& grid, const std::function<Complex(double)>& f) {
    ComplexVector v(grid.points);
    for (int i = 0; i < grid.points; ++i) v[i] = f(grid.position(i));
    return LatticeField(grid, std::move(v));
  }

  /// Samples an even kernel `f` at the minimum-image displacement of each site.
  static LatticeField sample_displacement(const GridSpec& grid,
                                          const std::function<Complex(double)>& f) {
    ComplexVector v(grid.points);
    for (int i = 0; i < grid.points; ++i) v[i] = f(grid.displacement(i));
    return LatticeField(grid, std::move(v));
  }

  const GridSpec& grid() const { return grid_; }
  const ComplexVector& values() const { return values_; }
  ComplexVector& values() { return values_; }
  int size() const { return grid_.points; }

  Complex operator[](int i) const { return values_[i]; }
  Complex& operator[](int i) { return values_[i]; }

  /// Sitewise |f|^2 as a real-valued field.
  LatticeField modulus_squared() const {
    return LatticeField(grid_, values_.cwiseAbs2().cast<Complex>());
  }

  LatticeField& operator+=(const LatticeField& o) {
    check_same_grid(o);
    values_ += o.values_;
    return *this;
  }
  LatticeField& operator-=(const LatticeField& o) {
    check_same_grid(o);
    values_ -= o.values_;
    return *this;
  }
  LatticeField& operator*=(Complex c) {
    values_ *= c;
    return *this;
  }

  friend LatticeField operator+(LatticeField a, const LatticeField& b) { return a += b; }
  friend LatticeField operator-(LatticeField a, const LatticeField& b) { return a -= b; }
  friend LatticeField operator*(Complex c, LatticeField a) { return a *= c; }
  friend LatticeField operator*(LatticeField a, Complex c) { return a *= c; }

  void check_same_grid(const LatticeField& o) const {
    if (!(grid_ == o.grid_)) throw InvalidArgument("fields live on different grids");
  }

 private:
  GridSpec grid_{};
  ComplexVector values_{};
};

/// Discrete inner product <f, g> = sum_i h conj(f_i) g_i.
inline Complex inner(const LatticeField& f, const LatticeField& g) {
  f.check_same_grid(g);
  return f.grid().spacing * f.values().dot(g.values());
}

/// Periodic second difference (f(x+h) - 2 f(x) + f(x-h)) / h^2.
inline LatticeField laplacian(const LatticeField& f) {
  const int m = f.size();
  const double inv_h2 = 1.0 / (f.grid().spacing * f.grid().spacing);
  ComplexVector out(m);
  for (int i = 0; i < m; ++i) {
    const int right = (i + 1) % m;
    const int left = (i + m - 1) % m;
    out[i] = (f[right] - 2.0 * f[i] + f[left]) * inv_h2;
  }
  return LatticeField(f.grid(), std::move(out));
}

/// Eigenvalues of -Laplacian on the plane waves e^{2 pi i m x / L}, in FFT order.
inline RealVector kinetic_symbol(const GridSpec& grid) {
  RealVector lambda(grid.points);
  const double inv_h2 = 1.0 / (grid.spacing * grid.spacing);
  for (int m = 0; m < grid.points; ++m)
    lambda[m] = 2.0 * inv_h2 * (1.0 - std::cos(2.0 * std::numbers::pi * m / grid.points));
  return lambda;
}

/// Matrix of -Laplacian in the site basis (real symmetric, periodic).
inline Eigen::MatrixXd kinetic_matrix(const GridSpec& grid) {
  const int m = grid.points;
  const double inv_h2 = 1.0 / (grid.spacing * grid.spacing);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    t(i, i) += 2.0 * inv_h2;
    t(i, (i + 1) % m) -= inv_h2;
    t(i, (i + m - 1) % m) -= inv_h2;
  }
  return t;
}

/// (sum_i h |f_i|^p)^{1/p}; p = kInfinity gives max_i |f_i|.
inline double lp_norm(const LatticeField& f, double p) {
  if (std::isinf(p) && p > 0) {
    return f.size() == 0 ? 0.0 : f.values().cwiseAbs().maxCoeff();
  }
  require(p >= 1.0, "L^p norm needs p >= 1");
  const double h = f.grid().spacing;
  // Scale by the max modulus so large p does not overflow.
  const double scale = f.values().cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < f.size(); ++i) sum += std::pow(std::abs(f[i]) / scale, p);
  return scale * std::pow(h * sum, 1.0 / p);
}

namespace detail {

inline Eigen::FFT<double>& fft_engine() {
  thread_local Eigen::FFT<double> engine;
  return engine;
}

inline ComplexVector fft_forward(const ComplexVector& in) {
  ComplexVector out(in.size());
  fft_engine().fwd(out, in);
  return out;
}

inline ComplexVector fft_inverse(const ComplexVector& in) {
  ComplexVector out(in.size());
  fft_engine().inv(out, in);
  return out;
}

}  // namespace detail

/// Periodic convolution (f * g)(x_i) = sum_j h f(x_i - x_j) g(x_j), evaluated spectrally.
inline LatticeField convolve(const LatticeField& f, const LatticeField& g) {
  f.check_same_grid(g);
  const ComplexVector fh = detail::fft_forward(f.values());
  const ComplexVector gh = detail::fft_forward(g.values());
  ComplexVector out = detail::fft_inverse(fh.cwiseProduct(gh));
  out *= f.grid().spacing;
  return LatticeField(f.grid(), std::move(out));
}

inline bool is_even(const LatticeField& v, double tolerance = 1e-12) {
  const int m = v.size();
  for (int i = 0; i < m; ++i)
    if (std::abs(v[i] - v[(m - i) % m]) > tolerance) return false;
  return true;
}

/// Scaled interaction v_N^beta(x) = N^{-1+beta} v(N^beta x) in one dimension,
/// sampled by nearest grid point. Points whose scaled argument leaves the
/// fundamental cell evaluate to zero (v is taken compactly supported).
inline LatticeField sample_interaction(const LatticeField& v_base, int particles, double beta) {
  require(particles >= 1, "interaction scaling needs N >= 1");
  require(is_even(v_base), "interaction profile must be even, v(x) = v(-x)");
  const GridSpec& grid = v_base.grid();
  const double n = static_cast<double>(particles);
  if (beta == 0.0) return v_base * Complex(1.0 / n);

  const double stretch = std::pow(n, beta);
  const double amplitude = std::pow(n, -1.0 + beta);
  const int m = grid.points;
  ComplexVector out = ComplexVector::Zero(m);
  for (int i = 0; i < m; ++i) {
    const double y = stretch * grid.displacement(i);
    const long j = std::lround(y / grid.spacing);
    // Fundamental cell in index units is (-M/2, M/2].
    if (2 * j > m || 2 * j <= -m) continue;
    out[i] = amplitude * v_base[grid.wrap(j)];
  }
  return LatticeField(grid, std::move(out));
}

/// Even box kernel: `amplitude` for |x| <= half_width, zero otherwise.
inline LatticeField box_profile(const GridSpec& grid, double amplitude, double half_width) {
  return LatticeField::sample_displacement(grid, [&](double x) {
    return Complex(std::abs(x) <= half_width + 1e-12 * grid.length ? amplitude : 0.0);
  });
}

inline LatticeField gaussian_profile(const GridSpec& grid, double amplitude, double width) {
  return LatticeField::sample_displacement(grid, [&](double x) {
    return Complex(amplitude * std::exp(-0.5 * x * x / (width * width)));
  });
}

/// amplitude * cos^2(pi x / (2 w)) on |x| < w.
inline LatticeField cosine_bump_profile(const GridSpec& grid, double amplitude, double width) {
  return LatticeField::sample_displacement(grid, [&](double x) {
    if (std::abs(x) >= width) return Complex(0.0);
    const double c = std::cos(0.5 * std::numbers::pi * x / width);
    return Complex(amplitude * c * c);
  });
}

}  // namespace mfcount

#pragma once

// Hartree propagation i d/dt phi = (-Laplacian + A^t + v * |phi|^2) phi on the
// periodic lattice, with time-dependent trap protocols.

#include <cmath>
#include <string>
#include <vector>

#include "mfcount/errors.hpp"
#include "mfcount/lattice.hpp"

namespace mfcount {

/// Unit-norm single-particle wave function.
class Orbital {
 public:
  static constexpr double kNormTolerance = 1e-10;

  explicit Orbital(LatticeField field) : field_(std::move(field)) {
    const double norm = lp_norm(field_, 2.0);
    if (std::abs(norm - 1.0) > kNormTolerance)
      throw InvalidArgument("orbital is not normalized (norm " + std::to_string(norm) + ")");
  }

  static Orbital normalized(LatticeField field) {
    const double norm = lp_norm(field, 2.0);
    require(norm > 0.0, "cannot normalize the zero field");
    field *= Complex(1.0 / norm);
    return Orbital(std::move(field));
  }

  const LatticeField& field() const { return field_; }
  const GridSpec& grid() const { return field_.grid(); }

  /// Coefficients in the sqrt(h)-normalized site basis; unit Euclidean norm.
  ComplexVector mode_vector() const { return std::sqrt(grid().spacing) * field_.values(); }

  static Orbital from_mode_vector(const GridSpec& grid, const ComplexVector& u) {
    return Orbital(LatticeField(grid, u / std::sqrt(grid.spacing)));
  }

 private:
  LatticeField field_;
};

enum class TrapKind { Constant, LinearRampOff, Quench };

inline std::string to_string(TrapKind kind) {
  switch (kind) {
    case TrapKind::Constant: return "constant";
    case TrapKind::LinearRampOff: return "linear-ramp-off";
    case TrapKind::Quench: return "quench";
  }
  return "unknown";
}

inline TrapKind trap_kind_from_string(const std::string& s) {
  if (s == "constant") return TrapKind::Constant;
  if (s == "linear-ramp-off" || s == "ramp") return TrapKind::LinearRampOff;
  if (s == "quench") return TrapKind::Quench;
  throw InvalidArgument("unknown trap kind '" + s + "'");
}

/// External potential A^t = s(t) A^0 for one of three switching protocols.
/// The ramp goes linearly from A^0 at t = 0 to zero at ramp_time; the quench
/// removes A^0 abruptly at ramp_time.
class TrapProtocol {
 public:
  TrapProtocol(TrapKind kind, LatticeField base_profile, double ramp_time = 0.0)
      : kind_(kind), base_(std::move(base_profile)), ramp_time_(ramp_time) {
    if (kind_ != TrapKind::Constant)
      require(ramp_time_ > 0.0, "ramp/quench trap needs ramp_time > 0");
    require(base_.values().imag().cwiseAbs().maxCoeff() <= 1e-12, "trap profile must be real");
  }

  static TrapProtocol none(const GridSpec& grid) {
    return TrapProtocol(TrapKind::Constant, LatticeField::zeros(grid));
  }

  TrapKind kind() const { return kind_; }
  const LatticeField& base_profile() const { return base_; }
  double ramp_time() const { return ramp_time_; }
  bool is_time_independent() const { return kind_ == TrapKind::Constant; }

  double scale(double t) const {
    switch (kind_) {
      case TrapKind::Constant: return 1.0;
      case TrapKind::LinearRampOff: return t <= 0.0 ? 1.0 : (t >= ramp_time_ ? 0.0 : 1.0 - t / ramp_time_);
      case TrapKind::Quench: return t < ramp_time_ ? 1.0 : 0.0;
    }
    return 1.0;
  }

  RealVector at(double t) const { return scale(t) * base_.values().real(); }

 private:
  TrapKind kind_;
  LatticeField base_;
  double ramp_time_;
};

enum class HartreeScheme { Splitting, ExplicitRk4 };

struct HartreeParams {
  double dt = 1e-3;
  double t_final = 1.0;
  HartreeScheme scheme = HartreeScheme::Splitting;

  /// Number of steps; throws unless t_final is an integer multiple of dt.
  long steps() const {
    require(dt > 0.0, "time step must be positive");
    require(t_final >= 0.0, "final time must be non-negative");
    const double ratio = t_final / dt;
    const long n = std::lround(ratio);
    require(std::abs(ratio - static_cast<double>(n)) <= 1e-9 * std::max(1.0, ratio),
            "t_final must be an integer multiple of dt");
    return n;
  }
};

/// v * |phi|^2 as a real potential.
inline RealVector mean_field_potential(const LatticeField& phi, const LatticeField& v) {
  phi.check_same_grid(v);
  const LatticeField u = convolve(v, phi.modulus_squared());
  const double scale = std::max(1.0, u.values().cwiseAbs().maxCoeff());
  if (u.values().imag().cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InvalidArgument("mean-field potential is not real; interaction must be real");
  return u.values().real();
}

inline RealVector mean_field_potential(const Orbital& phi, const LatticeField& v) {
  return mean_field_potential(phi.field(), v);
}

namespace detail {

inline LatticeField kinetic_flow(const LatticeField& f, double tau) {
  const RealVector lambda = kinetic_symbol(f.grid());
  ComplexVector spectrum = fft_forward(f.values());
  for (int m = 0; m < spectrum.size(); ++m) spectrum[m] *= std::polar(1.0, -lambda[m] * tau);
  return LatticeField(f.grid(), fft_inverse(spectrum));
}

inline LatticeField potential_flow(const LatticeField& f, const RealVector& potential, double tau) {
  ComplexVector out = f.values();
  for (int i = 0; i < out.size(); ++i) out[i] *= std::polar(1.0, -potential[i] * tau);
  return LatticeField(f.grid(), std::move(out));
}

/// -i h^H(t, phi) phi
inline LatticeField hartree_rhs(const LatticeField& phi, const TrapProtocol& trap,
                                const LatticeField& v, double t) {
  const RealVector potential = trap.at(t) + mean_field_potential(phi, v);
  ComplexVector hphi = -laplacian(phi).values();
  hphi += potential.cast<Complex>().cwiseProduct(phi.values());
  return LatticeField(phi.grid(), Complex(0.0, -1.0) * hphi);
}

}  // namespace detail

/// One step of length dt (negative dt steps backward). Fields need not be
/// normalized; the norm is checked against the input's.
inline LatticeField hartree_step(const LatticeField& phi, const TrapProtocol& trap,
                                 const LatticeField& v, double t, double dt,
                                 HartreeScheme scheme = HartreeScheme::Splitting) {
  phi.check_same_grid(v);
  phi.check_same_grid(trap.base_profile());
  if (dt == 0.0) return phi;

  LatticeField next;
  if (scheme == HartreeScheme::Splitting) {
    // The potential substep only changes phases, so the density after the
    // first kinetic half-step is the midpoint density of the whole step.
    LatticeField chi = detail::kinetic_flow(phi, 0.5 * dt);
    const RealVector potential = trap.at(t + 0.5 * dt) + mean_field_potential(chi, v);
    chi = detail::potential_flow(chi, potential, dt);
    next = detail::kinetic_flow(chi, 0.5 * dt);
  } else {
    const LatticeField k1 = detail::hartree_rhs(phi, trap, v, t);
    const LatticeField k2 = detail::hartree_rhs(phi + Complex(0.5 * dt) * k1, trap, v, t + 0.5 * dt);
    const LatticeField k3 = detail::hartree_rhs(phi + Complex(0.5 * dt) * k2, trap, v, t + 0.5 * dt);
    const LatticeField k4 = detail::hartree_rhs(phi + Complex(dt) * k3, trap, v, t + dt);
    next = phi + Complex(dt / 6.0) * (k1 + Complex(2.0) * k2 + Complex(2.0) * k3 + k4);
  }

  const double before = lp_norm(phi, 2.0);
  const double after = lp_norm(next, 2.0);
  if (before > 0.0 && std::abs(after / before - 1.0) > 1e-6)
    throw InstabilityError("Hartree step changed the norm by " +
                           std::to_string(std::abs(after / before - 1.0)) +
                           "; reduce dt");
  return next;
}

inline Orbital hartree_step(const Orbital& phi, const TrapProtocol& trap, const LatticeField& v,
                            double t, double dt, HartreeScheme scheme = HartreeScheme::Splitting) {
  // Renormalize away rounding so repeated steps keep the Orbital invariant.
  return Orbital::normalized(hartree_step(phi.field(), trap, v, t, dt, scheme));
}

struct OrbitalTrajectory {
  std::vector<double> times;
  std::vector<LatticeField> fields;

  std::size_t size() const { return times.size(); }
};

/// Evolves from t0 for `steps` steps of size dt (dt < 0 runs backward).
inline OrbitalTrajectory evolve_hartree_fields(const LatticeField& phi0, const TrapProtocol& trap,
                                               const LatticeField& v, double t0, double dt,
                                               long steps,
                                               HartreeScheme scheme = HartreeScheme::Splitting) {
  OrbitalTrajectory traj;
  traj.times.reserve(steps + 1);
  traj.fields.reserve(steps + 1);
  traj.times.push_back(t0);
  traj.fields.push_back(phi0);
  LatticeField phi = phi0;
  for (long n = 0; n < steps; ++n) {
    const double t = t0 + n * dt;
    phi = hartree_step(phi, trap, v, t, dt, scheme);
    traj.times.push_back(t0 + (n + 1) * dt);
    traj.fields.push_back(phi);
  }
  return traj;
}

inline OrbitalTrajectory evolve_hartree(const Orbital& phi0, const TrapProtocol& trap,
                                        const LatticeField& v, const HartreeParams& params) {
  return evolve_hartree_fields(phi0.field(), trap, v, 0.0, params.dt, params.steps(),
                               params.scheme);
}

/// ||phi^t||_{2s} at every sample; s = kInfinity gives the max norm.
inline std::vector<double> orbital_norm_series(const OrbitalTrajectory& traj, double s) {
  require(s >= 1.0, "orbital norm exponent s must be >= 1");
  std::vector<double> out;
  out.reserve(traj.size());
  for (const auto& f : traj.fields) out.push_back(lp_norm(f, std::isinf(s) ? kInfinity : 2.0 * s));
  return out;
}

/// <phi, (-Laplacian + A^t) phi>
inline double single_particle_energy(const LatticeField& phi, const TrapProtocol& trap, double t) {
  LatticeField h = laplacian(phi) * Complex(-1.0);
  h.values() += trap.at(t).cast<Complex>().cwiseProduct(phi.values());
  return inner(phi, h).real();
}

}  // namespace mfcount

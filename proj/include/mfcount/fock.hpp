#pragma once

// Symmetric N-body states in the occupation-number basis of lattice sites,
// the second-quantized Hamiltonian
//   H = sum_ij T_ij a_i^+ a_j + sum_i A^t_i n_i + 1/2 sum_ab v(x_a - x_b)(n_a n_b - delta_ab n_a)
// and its unitary propagation. Site modes carry a sqrt(h) weight, so Fock
// inner products coincide with discrete L^2 inner products.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mfcount/errors.hpp"
#include "mfcount/fock_basis.hpp"
#include "mfcount/krylov.hpp"
#include "mfcount/lattice.hpp"
#include "mfcount/meanfield.hpp"

namespace mfcount {

using SparseMatrix = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;
using BasisPtr = std::shared_ptr<const FockBasis>;

inline BasisPtr make_basis(int modes, int particles,
                           std::size_t capacity = FockBasis::kDefaultCapacity) {
  return std::make_shared<const FockBasis>(modes, particles, capacity);
}

/// Coefficients over a Fock basis. Physical states have unit norm; the
/// counting operators also produce unnormalized vectors of this type.
class ManyBodyState {
 public:
  static constexpr double kNormTolerance = 1e-10;

  ManyBodyState(BasisPtr basis, ComplexVector coefficients)
      : basis_(std::move(basis)), coefficients_(std::move(coefficients)) {
    require(basis_ != nullptr, "state needs a basis");
    require(static_cast<std::size_t>(coefficients_.size()) == basis_->dimension(),
            "coefficient count does not match basis dimension");
  }

  const FockBasis& basis() const { return *basis_; }
  const BasisPtr& basis_ptr() const { return basis_; }
  const ComplexVector& coefficients() const { return coefficients_; }
  ComplexVector& coefficients() { return coefficients_; }
  int particles() const { return basis_->particles(); }
  int modes() const { return basis_->modes(); }
  double norm() const { return coefficients_.norm(); }

  bool is_normalized(double tol = kNormTolerance) const {
    return std::abs(coefficients_.squaredNorm() - 1.0) <= tol;
  }

  void require_normalized() const {
    if (!is_normalized())
      throw InvalidArgument("many-body state is not normalized (|c|^2 = " +
                            std::to_string(coefficients_.squaredNorm()) + ")");
  }

  ManyBodyState normalized() const {
    const double n = norm();
    require(n > 0.0, "cannot normalize the zero state");
    return ManyBodyState(basis_, coefficients_ / n);
  }

  Complex overlap(const ManyBodyState& other) const {
    require(*basis_ == other.basis(), "states live in different bases");
    return coefficients_.dot(other.coefficients_);
  }

 private:
  BasisPtr basis_;
  ComplexVector coefficients_;
};

struct HamiltonianSpec {
  GridSpec grid;
  LatticeField v_scaled;  // pair potential, e.g. v/N at beta = 0
  TrapProtocol trap;
  int particles = 1;

  void validate() const {
    require(particles >= 1, "Hamiltonian needs N >= 1");
    require(v_scaled.grid() == grid, "interaction grid does not match");
    require(trap.base_profile().grid() == grid, "trap grid does not match");
    require(is_even(v_scaled), "pair potential must be even");
  }
};

namespace detail {

inline double log_factorial(int n) { return std::lgamma(static_cast<double>(n) + 1.0); }

/// Index of the state reached from `occ` by moving one particle from mode j to mode i.
inline std::size_t hop_index(const FockBasis& basis, std::span<const std::uint8_t> occ, int i,
                             int j, std::vector<int>& scratch) {
  scratch.assign(occ.begin(), occ.end());
  --scratch[j];
  ++scratch[i];
  return basis.index_of(std::span<const int>(scratch));
}

}  // namespace detail

/// Diagonal of 1/2 sum_ab v(x_a - x_b)(n_a n_b - delta_ab n_a) over the basis.
inline RealVector pair_interaction_diagonal(const FockBasis& basis, const LatticeField& v) {
  require(v.size() == basis.modes(), "pair potential grid does not match basis modes");
  const int m = basis.modes();
  const RealVector vr = v.values().real();
  RealVector out(basis.dimension());
  for (std::size_t s = 0; s < basis.dimension(); ++s) {
    const auto occ = basis.occupation(s);
    double e = 0.0;
    for (int a = 0; a < m; ++a) {
      if (occ[a] == 0) continue;
      const double na = occ[a];
      e += 0.5 * vr[0] * na * (na - 1.0);
      for (int b = a + 1; b < m; ++b)
        if (occ[b] != 0) e += vr[(a - b + m) % m] * na * occ[b];
    }
    out[s] = e;
  }
  return out;
}

/// Diagonal of sum_i w_i n_i over the basis.
inline RealVector one_body_diagonal(const FockBasis& basis, const RealVector& w) {
  require(w.size() == basis.modes(), "potential size does not match basis modes");
  RealVector out(basis.dimension());
  for (std::size_t s = 0; s < basis.dimension(); ++s) {
    const auto occ = basis.occupation(s);
    double e = 0.0;
    for (int i = 0; i < basis.modes(); ++i) e += w[i] * occ[i];
    out[s] = e;
  }
  return out;
}

/// Matrix of sum_ij t_ij a_i^+ a_j for a single-particle matrix t.
inline SparseMatrix one_body_operator(const FockBasis& basis, const ComplexMatrix& t) {
  require(t.rows() == basis.modes() && t.cols() == basis.modes(),
          "single-particle matrix does not match basis modes");
  const int m = basis.modes();
  std::vector<Eigen::Triplet<Complex>> entries;
  std::vector<int> scratch;
  for (std::size_t s = 0; s < basis.dimension(); ++s) {
    const auto occ = basis.occupation(s);
    Complex diag = 0.0;
    for (int j = 0; j < m; ++j) {
      if (occ[j] == 0) continue;
      diag += t(j, j) * static_cast<double>(occ[j]);
      for (int i = 0; i < m; ++i) {
        if (i == j || t(i, j) == Complex(0.0)) continue;
        const double amp = std::sqrt(static_cast<double>(occ[j]) * (occ[i] + 1.0));
        entries.emplace_back(static_cast<int>(detail::hop_index(basis, occ, i, j, scratch)),
                             static_cast<int>(s), t(i, j) * amp);
      }
    }
    if (diag != Complex(0.0)) entries.emplace_back(static_cast<int>(s), static_cast<int>(s), diag);
  }
  SparseMatrix op(basis.dimension(), basis.dimension());
  op.setFromTriplets(entries.begin(), entries.end());
  return op;
}

/// Second-quantized H_N split as static part (kinetic + pair interaction)
/// plus s(t) times the trap diagonal.
class FockHamiltonian {
 public:
  FockHamiltonian(HamiltonianSpec spec, BasisPtr basis)
      : spec_(std::move(spec)), basis_(std::move(basis)) {
    spec_.validate();
    require(basis_->modes() == spec_.grid.points && basis_->particles() == spec_.particles,
            "basis does not match Hamiltonian (modes/particles)");
    interaction_ = pair_interaction_diagonal(*basis_, spec_.v_scaled);
    static_part_ = one_body_operator(*basis_, kinetic_matrix(spec_.grid).cast<Complex>());
    for (std::size_t s = 0; s < basis_->dimension(); ++s)
      static_part_.coeffRef(static_cast<int>(s), static_cast<int>(s)) += interaction_[s];
    static_part_.makeCompressed();
    trap_ = one_body_diagonal(*basis_, spec_.trap.base_profile().values().real());
  }

  const HamiltonianSpec& spec() const { return spec_; }
  const FockBasis& basis() const { return *basis_; }
  const BasisPtr& basis_ptr() const { return basis_; }
  const RealVector& interaction_diagonal() const { return interaction_; }
  const RealVector& trap_diagonal() const { return trap_; }

  SparseMatrix matrix_with_scale(double trap_scale) const {
    SparseMatrix h = static_part_;
    for (std::size_t s = 0; s < basis_->dimension(); ++s)
      h.coeffRef(static_cast<int>(s), static_cast<int>(s)) += trap_scale * trap_[s];
    return h;
  }

  SparseMatrix matrix(double t) const { return matrix_with_scale(spec_.trap.scale(t)); }

  ComplexVector apply_with_scale(const ComplexVector& v, double trap_scale) const {
    ComplexVector out = static_part_ * v;
    out += (trap_scale * trap_).cast<Complex>().cwiseProduct(v);
    return out;
  }

  ComplexVector apply(const ComplexVector& v, double t) const {
    return apply_with_scale(v, spec_.trap.scale(t));
  }

  double energy(const ManyBodyState& psi, double t) const {
    return psi.coefficients().dot(apply(psi.coefficients(), t)).real();
  }

 private:
  HamiltonianSpec spec_;
  BasisPtr basis_;
  RealVector interaction_;
  RealVector trap_;
  SparseMatrix static_part_;
};

inline SparseMatrix assemble_hamiltonian(const HamiltonianSpec& spec, const BasisPtr& basis,
                                         double t) {
  return FockHamiltonian(spec, basis).matrix(t);
}

struct PropagatorOptions {
  std::size_t dense_threshold = 512;
  KrylovOptions krylov{};
  double norm_tolerance = 1e-9;
};

/// Steps i dPsi/dt = H(t) Psi with H frozen at the step midpoint. Below the
/// dense threshold the exponential comes from a cached eigendecomposition
/// (recomputed whenever the trap scale changes); above it, from Lanczos.
class SchroedingerPropagator {
 public:
  SchroedingerPropagator(HamiltonianSpec spec, BasisPtr basis, PropagatorOptions opts = {})
      : hamiltonian_(std::move(spec), std::move(basis)), opts_(opts) {}

  const FockHamiltonian& hamiltonian() const { return hamiltonian_; }
  bool uses_dense() const { return hamiltonian_.basis().dimension() < opts_.dense_threshold; }

  ManyBodyState step(const ManyBodyState& psi, double t, double dt) {
    require(psi.basis() == hamiltonian_.basis(), "state basis does not match Hamiltonian");
    if (dt == 0.0) return psi;
    const double scale = hamiltonian_.spec().trap.scale(t + 0.5 * dt);
    ComplexVector next;
    if (uses_dense()) {
      const auto& eig = decomposition(scale);
      ComplexVector c = eig.eigenvectors().adjoint() * psi.coefficients();
      for (int k = 0; k < c.size(); ++k) c[k] *= std::polar(1.0, -eig.eigenvalues()[k] * dt);
      next = eig.eigenvectors() * c;
    } else {
      next = krylov_expm(
          [&](const ComplexVector& v) { return hamiltonian_.apply_with_scale(v, scale); },
          psi.coefficients(), dt, opts_.krylov);
    }
    const double before = psi.norm();
    const double drift = std::abs(next.norm() - before);
    if (drift > opts_.norm_tolerance * std::max(1.0, before))
      throw InstabilityError("N-body step changed the norm by " + std::to_string(drift));
    return ManyBodyState(psi.basis_ptr(), std::move(next));
  }

  double energy(const ManyBodyState& psi, double t) const { return hamiltonian_.energy(psi, t); }

 private:
  using Eigensolver = Eigen::SelfAdjointEigenSolver<ComplexMatrix>;

  const Eigensolver& decomposition(double scale) {
    if (!cached_scale_ || *cached_scale_ != scale) {
      const ComplexMatrix dense(hamiltonian_.matrix_with_scale(scale));
      eigensolver_.compute(dense);
      if (eigensolver_.info() != Eigen::Success)
        throw InstabilityError("dense diagonalization of H failed");
      cached_scale_ = scale;
    }
    return eigensolver_;
  }

  FockHamiltonian hamiltonian_;
  PropagatorOptions opts_;
  Eigensolver eigensolver_;
  std::optional<double> cached_scale_;
};

/// One step of length dt starting at time t.
inline ManyBodyState evolve_schroedinger(const ManyBodyState& psi, const HamiltonianSpec& spec,
                                         double dt, double t, PropagatorOptions opts = {}) {
  SchroedingerPropagator prop(spec, psi.basis_ptr(), opts);
  return prop.step(psi, t, dt);
}

/// Symmetric product phi^{(x)N}: coefficient sqrt(N!/prod n_i!) prod u_i^{n_i}
/// with u the sqrt(h)-weighted mode vector of phi.
inline ManyBodyState product_state(const Orbital& phi, const BasisPtr& basis) {
  require(phi.grid().points == basis->modes(), "orbital grid does not match basis modes");
  const ComplexVector u = phi.mode_vector();
  const int n = basis->particles();
  ComplexVector c(basis->dimension());
  for (std::size_t s = 0; s < basis->dimension(); ++s) {
    const auto occ = basis->occupation(s);
    double log_weight = detail::log_factorial(n);
    Complex value = 1.0;
    for (int i = 0; i < basis->modes(); ++i) {
      if (occ[i] == 0) continue;
      log_weight -= detail::log_factorial(occ[i]);
      value *= std::pow(u[i], static_cast<int>(occ[i]));
    }
    c[s] = std::exp(0.5 * log_weight) * value;
  }
  ManyBodyState psi(basis, std::move(c));
  psi.require_normalized();
  return psi;
}

/// Symmetrized, normalized phi^{(x)(N-1)} (x) phi_perp: N-1 particles in phi, one in phi_perp.
inline ManyBodyState one_defect_state(const Orbital& phi, const Orbital& phi_perp,
                                      const BasisPtr& basis) {
  require(phi.grid().points == basis->modes() && phi_perp.grid() == phi.grid(),
          "orbital grids do not match basis modes");
  require(std::abs(inner(phi.field(), phi_perp.field())) <= 1e-10,
          "defect orbital must be orthogonal to the condensate orbital");
  const ComplexVector u = phi.mode_vector();
  const ComplexVector w = phi_perp.mode_vector();
  const int n = basis->particles();
  const int m = basis->modes();
  ComplexVector c(basis->dimension());
  std::vector<int> reduced(m);
  for (std::size_t s = 0; s < basis->dimension(); ++s) {
    const auto occ = basis->occupation(s);
    double log_weight = detail::log_factorial(n - 1);
    for (int i = 0; i < m; ++i) log_weight -= detail::log_factorial(occ[i]);
    // sqrt((N-1)!/prod n!) sum_i n_i w_i u^{n - e_i}
    Complex sum = 0.0;
    for (int i = 0; i < m; ++i) {
      if (occ[i] == 0) continue;
      Complex term = static_cast<double>(occ[i]) * w[i];
      for (int k = 0; k < m; ++k) {
        const int power = occ[k] - (k == i ? 1 : 0);
        if (power > 0) term *= std::pow(u[k], power);
      }
      sum += term;
    }
    c[s] = std::exp(0.5 * log_weight) * sum;
  }
  ManyBodyState psi(basis, std::move(c));
  psi.require_normalized();
  return psi;
}

/// Rank-N tensor over site modes, flattened with x_1 most significant.
struct FirstQuantizedTensor {
  int modes = 0;
  int particles = 0;
  ComplexVector data;

  std::size_t size() const { return static_cast<std::size_t>(data.size()); }

  std::vector<int> unflatten(std::size_t index) const {
    std::vector<int> x(particles);
    for (int j = particles - 1; j >= 0; --j) {
      x[j] = static_cast<int>(index % modes);
      index /= modes;
    }
    return x;
  }

  std::size_t flatten(const std::vector<int>& x) const {
    std::size_t index = 0;
    for (int j = 0; j < particles; ++j) index = index * modes + x[j];
    return index;
  }
};

namespace detail {

inline std::size_t checked_tensor_size(int modes, int particles, std::size_t capacity) {
  double total = std::pow(static_cast<double>(modes), particles);
  if (total > static_cast<double>(capacity))
    throw CapacityError("first-quantized tensor with " + std::to_string(modes) + "^" +
                        std::to_string(particles) + " entries exceeds capacity " +
                        std::to_string(capacity));
  return static_cast<std::size_t>(std::llround(total));
}

inline std::vector<int> occupation_of(const std::vector<int>& x, int modes) {
  std::vector<int> occ(modes, 0);
  for (int xi : x) ++occ[xi];
  return occ;
}

}  // namespace detail

inline constexpr std::size_t kDefaultTensorCapacity = 1000000;

/// Entry at (x_1..x_N) is c(n(x)) sqrt(prod n_i!/N!); norms agree with the Fock norm.
inline FirstQuantizedTensor first_quantized_tensor(const ManyBodyState& psi,
                                                   std::size_t capacity = kDefaultTensorCapacity) {
  const int m = psi.modes();
  const int n = psi.particles();
  FirstQuantizedTensor t{m, n, ComplexVector(detail::checked_tensor_size(m, n, capacity))};
  for (std::size_t idx = 0; idx < t.size(); ++idx) {
    const auto occ = detail::occupation_of(t.unflatten(idx), m);
    double log_weight = -detail::log_factorial(n);
    for (int k : occ) log_weight += detail::log_factorial(k);
    t.data[idx] = psi.coefficients()[psi.basis().index_of(occ)] * std::exp(0.5 * log_weight);
  }
  return t;
}

/// Projects a tensor onto the symmetric sector and returns Fock coefficients.
/// Exact inverse of first_quantized_tensor on symmetric tensors.
inline ManyBodyState from_first_quantized(const FirstQuantizedTensor& t, const BasisPtr& basis) {
  require(t.modes == basis->modes() && t.particles == basis->particles(),
          "tensor shape does not match basis");
  ComplexVector c = ComplexVector::Zero(basis->dimension());
  for (std::size_t idx = 0; idx < t.size(); ++idx) {
    const auto occ = detail::occupation_of(t.unflatten(idx), t.modes);
    double log_weight = -detail::log_factorial(t.particles);
    for (int k : occ) log_weight += detail::log_factorial(k);
    c[basis->index_of(occ)] += t.data[idx] * std::exp(0.5 * log_weight);
  }
  return ManyBodyState(basis, std::move(c));
}

}  // namespace mfcount

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfcount/errors.hpp"

namespace mfcount {

/// Number of ways to put `particles` bosons into `modes` modes, C(M+N-1, N);
/// saturates at UINT64_MAX.
inline std::uint64_t bosonic_dimension(int modes, int particles) {
  if (modes == 0) return particles == 0 ? 1 : 0;
  // C(M+N-1, N) built incrementally; each partial product is itself a binomial.
  unsigned __int128 value = 1;
  for (int k = 1; k <= particles; ++k) {
    value = value * static_cast<unsigned>(modes - 1 + k) / static_cast<unsigned>(k);
    if (value > UINT64_MAX) return UINT64_MAX;
  }
  return static_cast<std::uint64_t>(value);
}

/// Occupation-number basis of N bosons in M modes. States are ordered
/// lexicographically with the first mode's occupation descending, so for
/// M = N = 2 the order is (2,0), (1,1), (0,2). Indices are computed by
/// combinatorial ranking; no lookup table is stored.
class FockBasis {
 public:
  static constexpr std::size_t kDefaultCapacity = 200000;

  FockBasis(int modes, int particles, std::size_t capacity = kDefaultCapacity)
      : modes_(modes), particles_(particles) {
    require(modes >= 1, "Fock basis needs at least one mode");
    require(particles >= 1, "Fock basis needs at least one particle");
    require(particles <= 255, "occupations are stored in 8 bits");
    const std::uint64_t dim = bosonic_dimension(modes, particles);
    if (dim > capacity)
      throw CapacityError("Fock dimension C(" + std::to_string(modes + particles - 1) + "," +
                          std::to_string(particles) + ") = " + std::to_string(dim) +
                          " exceeds capacity " + std::to_string(capacity));
    dimension_ = static_cast<std::size_t>(dim);

    counts_.assign(modes_ + 1, std::vector<std::uint64_t>(particles_ + 1, 0));
    for (int k = 0; k <= modes_; ++k)
      for (int p = 0; p <= particles_; ++p) counts_[k][p] = bosonic_dimension(k, p);

    occupations_.reserve(dimension_ * modes_);
    std::vector<std::uint8_t> current(modes_, 0);
    fill(0, particles_, current);
    if (occupations_.size() != dimension_ * modes_)
      throw std::logic_error("Fock enumeration produced the wrong number of states");
  }

  int modes() const { return modes_; }
  int particles() const { return particles_; }
  std::size_t dimension() const { return dimension_; }

  std::span<const std::uint8_t> occupation(std::size_t index) const {
    return {occupations_.data() + index * modes_, static_cast<std::size_t>(modes_)};
  }

  /// Rank of an occupation vector; must have M entries summing to N.
  template <typename Int>
  std::size_t index_of(std::span<const Int> occ) const {
    std::size_t rank = 0;
    int remaining = particles_;
    for (int i = 0; i + 1 < modes_; ++i) {
      const int n = static_cast<int>(occ[i]);
      // States whose mode-i occupation exceeds n come first.
      for (int m = remaining; m > n; --m) rank += counts_[modes_ - i - 1][remaining - m];
      remaining -= n;
    }
    return rank;
  }

  std::size_t index_of(const std::vector<int>& occ) const {
    return index_of(std::span<const int>(occ));
  }

  friend bool operator==(const FockBasis& a, const FockBasis& b) {
    return a.modes_ == b.modes_ && a.particles_ == b.particles_;
  }

 private:
  void fill(int mode, int remaining, std::vector<std::uint8_t>& current) {
    if (mode == modes_ - 1) {
      current[mode] = static_cast<std::uint8_t>(remaining);
      occupations_.insert(occupations_.end(), current.begin(), current.end());
      return;
    }
    for (int n = remaining; n >= 0; --n) {
      current[mode] = static_cast<std::uint8_t>(n);
      fill(mode + 1, remaining - n, current);
    }
    current[mode] = 0;
  }

  int modes_;
  int particles_;
  std::size_t dimension_ = 0;
  std::vector<std::vector<std::uint64_t>> counts_;
  std::vector<std::uint8_t> occupations_;
};

inline FockBasis enumerate_basis(int modes, int particles,
                                 std::size_t capacity = FockBasis::kDefaultCapacity) {
  return FockBasis(modes, particles, capacity);
}

}  // namespace mfcount

#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace mtu {

// Independent generator for (seed, tag). Every consumer of randomness gets its
// own tag so adding draws in one place never shifts another's stream.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return std::mt19937_64(seq);
}

template <typename Derived, typename Rng>
void fill_normal(Eigen::MatrixBase<Derived>& m, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
}

}  // namespace mtu

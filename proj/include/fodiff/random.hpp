// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Core>

namespace fodiff {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream `stream` of a base seed.
inline Rng split_rng(std::uint64_t seed, std::uint64_t stream)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x464f4444u};
  return Rng(seq);
}

/// Fills with i.i.d. N(0, 1). A fresh distribution per call keeps the result a
/// pure function of the engine state.
template <class Derived>
void fill_gaussian(Eigen::DenseBase<Derived>& out, Rng& rng)
{
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      out(i, j) = static_cast<typename Derived::Scalar>(n(rng));
}

inline double gaussian(Rng& rng)
{
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

inline double uniform(Rng& rng, double lo, double hi)
{
  std::uniform_real_distribution<double> u(lo, hi);
  return u(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive)
{
  std::uniform_int_distribution<int> u(lo, hi_inclusive);
  return u(rng);
}

inline std::string rng_state(const Rng& rng)
{
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void set_rng_state(Rng& rng, const std::string& state)
{
  std::istringstream is(state);
  is >> rng;
}

} // namespace fodiff

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace rain {

// A latent frame is a d-vector; a window stacks frames as rows (frame-major).
using Frame = Eigen::VectorXd;
using Window = Eigen::MatrixXd;
using Timestep = int;
using Timesteps = std::vector<Timestep>;

using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-facing configuration (bad ranges, divisibility, unknown keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Factorization failures and non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Named sub-stream of a root seed. Changing one component's draws never
/// shifts another's.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return detail::splitmix64(seed ^ detail::splitmix64(detail::fnv1a(name)));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return detail::splitmix64(detail::splitmix64(seed ^ detail::splitmix64(a)) ^ (b + 0x632be59bd9b4e019ULL));
}

inline Frame standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Frame out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = normal(rng);
  return out;
}

inline Window standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Window out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal(rng);
  return out;
}

/// Noise owned by one frame at one stage of its lifetime. Streaming and
/// offline samplers draw identical noise for the same (seed, frame, stage).
inline Frame frame_noise(std::uint64_t seed, std::uint64_t frame, std::uint64_t stage, Eigen::Index d) {
  Rng rng(derive_seed(seed, frame, stage));
  return standard_normal(rng, d);
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

}  // namespace rain

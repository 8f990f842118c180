#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <boost/random/uniform_01.hpp>

namespace gas {

/// Base error type. `kind()` is a short stable tag used by the CLI in its
/// machine-parsable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};
struct ContractViolation : Error {
  explicit ContractViolation(const std::string& what) : Error("contract", what) {}
};
struct OutOfEpisodeError : Error {
  explicit OutOfEpisodeError(const std::string& what) : Error("out_of_episode", what) {}
};
struct DatasetError : Error {
  explicit DatasetError(const std::string& what) : Error("dataset", what) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& what) : Error("training", what) {}
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

// mt19937_64 is fully specified by the standard; distributions come from
// Boost.Random so streams are identical across standard libraries.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return boost::random::uniform_01<double>()(rng); }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// splitmix64 finalizer; derives independent child seeds from (seed, tags).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

/// FNV-1a over raw bytes.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gas

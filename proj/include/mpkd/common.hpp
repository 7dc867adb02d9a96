#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mpkd {

/// Single exception type for every recoverable failure in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using TimeStep = std::uint32_t;

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent seeded streams.
std::uint64_t mix64(std::uint64_t x);

/// Derives a stream seed from a base seed and an ordered list of coordinates
/// (epoch, batch, position, ...). Same inputs always give the same seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> parts = {}) {
  return Rng(derive_seed(base, parts));
}

/// Uniform integer in [0, n). n must be positive.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// 64-bit FNV-1a, hex encoded; used for config and checkpoint digests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Worker count used by parallel_for. Results never depend on it.
void set_num_threads(unsigned n);
unsigned num_threads();

/// Runs fn(i) for i in [0, n). Each index must write only to its own output slot.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mpkd

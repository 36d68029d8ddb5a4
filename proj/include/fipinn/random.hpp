#pragma once

#include <cstdint>
#include <random>

namespace fipinn {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent per-stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for sub-stream `stream` at position `index` of a run keyed by `master`.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(master) ^ (stream * 0xd1b54a32d192ed03ULL)) + index);
}

/// Named streams so that unrelated consumers never share a seed.
enum class Stream : std::uint64_t {
  init = 1,
  interior = 2,
  boundary = 3,
  sais = 4,
  rar = 5,
  uniform = 6,
  estimate = 7,
  normalizer = 8,
  evaluation = 9,
  retry = 10,
};

constexpr std::uint64_t derive_seed(std::uint64_t master, Stream s, std::uint64_t index = 0) noexcept {
  return derive_seed(master, static_cast<std::uint64_t>(s), index);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace fipinn

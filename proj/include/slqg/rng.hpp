#pragma once

#include <cstdint>
#include <random>

namespace slqg {

// Stream tags keep the per-purpose random streams independent even when they
// share one base seed, so coupled experiments can reuse the chain and noise
// of a run while varying, e.g., only the perturbation draws.
enum class Stream : std::uint64_t {
  Chain = 0x9e3779b97f4a7c15ULL,
  Noise = 0xbf58476d1ce4e5b9ULL,
  Perturbation = 0x94d049bb133111ebULL,
  // Noise stream for runs that opt out of common random numbers: decorrelated
  // from Stream::Noise so such runs never accidentally pair with CRN studies.
  NoiseIndependent = 0xd6e8feb86659fd93ULL,
};

namespace detail {

// SplitMix64 step (Steele/Lea/Flood); used only to derive well-spread seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Deterministic per-(stream, index) seed derivation from one base seed.
// Index is typically a path number; every (base, stream, index) triple maps
// to a distinct, decorrelated 64-bit seed.
inline std::uint64_t derive_seed(std::uint64_t base_seed, Stream stream,
                                 std::uint64_t index) {
  std::uint64_t s = base_seed ^ static_cast<std::uint64_t>(stream);
  std::uint64_t mixed = detail::splitmix64(s);
  s = mixed + index;
  return detail::splitmix64(s);
}

// Engine factory: one engine per (stream, index) so concurrent path workers
// never share generator state and results are independent of scheduling.
inline std::mt19937_64 make_engine(std::uint64_t base_seed, Stream stream,
                                   std::uint64_t index) {
  return std::mt19937_64(derive_seed(base_seed, stream, index));
}

}  // namespace slqg

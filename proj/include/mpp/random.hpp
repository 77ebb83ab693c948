#ifndef MPP_RANDOM_HPP_
#define MPP_RANDOM_HPP_

#include <cmath>
#include <cstdint>
#include <random>

namespace mpp {

using Engine = std::mt19937_64;

// SplitMix64 finalizer; a bijective mixer used to decorrelate derived seeds.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Replica r of an ensemble draws from master ^ r.
constexpr std::uint64_t replica_seed(std::uint64_t master, std::uint64_t replica) { return master ^ replica; }

inline Engine make_engine(std::uint64_t seed) { return Engine(splitmix64(seed)); }

/*
 * Counter-based pseudorandom function: the n-th draw of stream `stream`
 * under master seed `seed`. Streams need no stored generator state, so
 * countably many of them can be created lazily.
 */
constexpr std::uint64_t prf(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) + counter);
}

// Uniform in the open interval (0, 1).
constexpr double to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double prf_exponential(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return -std::log(to_open_unit(prf(seed, stream, counter)));
}

inline double uniform01(Engine& rng) { return to_open_unit(rng()); }

inline double exponential(Engine& rng, double rate) { return -std::log(uniform01(rng)) / rate; }

}  // namespace mpp

#endif  // MPP_RANDOM_HPP_

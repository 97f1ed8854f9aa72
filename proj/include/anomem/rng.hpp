#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace anomem::rng {

// Named substreams. Every random draw in the library flows from
// (user seed, stream tag, indices...) so that runs are reproducible and
// parallel workers can derive independent engines without sharing state.
enum class Stream : std::uint64_t {
  memory_init = 1,
  encoder_init = 2,
  shuffle = 3,
  augment = 4,
  positions = 5,
  synth_data = 6,
  split = 7,
  probe = 8,
  head_init = 9,
  sweep = 10,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Hash-chains the path into a single 64-bit value.
inline std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = seed;
  std::uint64_t mixed = splitmix64(h);
  for (std::uint64_t p : path) {
    h ^= p + 0x9e3779b97f4a7c15ULL + (mixed << 6) + (mixed >> 2);
    mixed = splitmix64(h);
  }
  return mixed;
}

inline std::mt19937_64 engine(std::uint64_t seed, Stream stream,
                              std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t h = derive(seed, {static_cast<std::uint64_t>(stream)});
  for (std::uint64_t p : path) h = derive(h, {p});
  return std::mt19937_64(h);
}

}  // namespace anomem::rng

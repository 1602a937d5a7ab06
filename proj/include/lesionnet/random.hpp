#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace lesionnet {

// Generator seeded from a tuple of keys (run seed, epoch, sample index, ...),
// so independent streams never depend on consumption order elsewhere.
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(keys.size() * 2);
  for (std::uint64_t k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
  return make_rng(keys)();
}

}  // namespace lesionnet

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace readlab {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a over raw bytes. Used for seed derivation and content checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Derives an independent sub-stream seed from the master seed and a fixed label
/// ("split", "gen", "reward", "clf", "batch", ...).
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

inline Rng make_stream(std::uint64_t master, std::string_view label) {
  return Rng(derive_seed(master, label));
}

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

std::string hex64(std::uint64_t v);

}  // namespace readlab

#pragma once

// Shared helpers for the unit suite and the acceptance binary.

#include <bit>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "weightscape/checkpoint.hpp"

namespace fixtures {

/// Checkpoint with a random manifest: random names, tags, ranks and extents,
/// and arbitrary float bit patterns (including NaNs, infinities and -0).
inline weightscape::Checkpoint random_checkpoint(std::uint64_t seed) {
  using namespace weightscape;
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  const std::size_t n = uniform(1, 12);
  std::vector<CheckpointEntry> entries;
  for (std::size_t i = 0; i < n; ++i) {
    CheckpointEntry e;
    e.name = "p" + std::to_string(i) + "." + std::to_string(rng() % 100000);
    const std::size_t tag = uniform(0, 3);
    e.block = tag == 0   ? BlockId::entry()
              : tag == 1 ? BlockId::block(uniform(1, 13))
              : tag == 2 ? BlockId::attention()
                         : BlockId::output();
    e.kind = all_param_kinds[uniform(0, all_param_kinds.size() - 1)];
    Shape shape(uniform(1, 4));
    for (auto& d : shape) d = uniform(1, 5);
    Tensor t(shape);
    for (float& v : t.data()) {
      if (e.kind == ParamKind::bn_running_var) {
        v = static_cast<float>(std::uniform_real_distribution<double>(0.0, 4.0)(rng));
      } else {
        v = std::bit_cast<float>(static_cast<std::uint32_t>(rng()));
      }
    }
    e.tensor = std::move(t);
    entries.push_back(std::move(e));
  }
  std::vector<std::string> provenance;
  for (std::size_t i = 0, m = uniform(0, 2); i < m; ++i) {
    provenance.push_back("record " + std::to_string(rng()));
  }
  return Checkpoint(std::move(entries), std::move(provenance));
}

}  // namespace fixtures

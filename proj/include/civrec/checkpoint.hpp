#pragma once

#include <cstdint>
#include <string>

#include "civrec/diff.hpp"
#include "civrec/trainer.hpp"

namespace civrec::checkpoint {

// Binary, little-endian. Magic "CIVREC1", a fixed header (counts, dims,
// backbone kind, variant, seed, epoch, fusion weights, Adam state header),
// then named tensor blocks as (name, shape, 32-bit float payload): the
// backbone tables, all extraction networks, and the Adam moments.
inline constexpr char kMagic[] = "CIVREC1";

void save_checkpoint(const std::string& path, const trainer::ModelState& state,
                     const diff::AdamState& adam, std::int64_t epoch);

struct Loaded {
  trainer::ModelState state;  // adjacency left empty; rebuild from the bundle
  diff::AdamState adam;
  std::int64_t epoch = 0;
};

Loaded load_checkpoint(const std::string& path);

}  // namespace civrec::checkpoint

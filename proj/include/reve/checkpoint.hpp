#pragma once

#include <string>
#include <utility>
#include <vector>

#include "reve/tensor.hpp"

namespace reve::checkpoint {

/// Flat container of named arrays. Layout, all little-endian:
///   magic "RVCP", u32 format version, u32 entry count,
///   per entry: u32 name length, name bytes (UTF-8), u32 rank,
///              u64 extents..., f64 row-major values (raw IEEE-754 bits).
/// Round-trips are bit-exact.
inline constexpr std::uint32_t kFormatVersion = 1;

void save(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> load(const std::string& path);

}  // namespace reve::checkpoint

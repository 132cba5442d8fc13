#include "spinv/types.hpp"

#include <fmt/format.h>

namespace spinv {

DimensionError::DimensionError(const std::string& what, long expected, long got)
    : Error(fmt::format("dimension mismatch in {}: expected {}, got {}", what, expected, got)),
      expected_(expected),
      got_(got)
{
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace spinv

#pragma once

// Reconstruction files written by `solve` and read by `eval`.
//
// Layout (little-endian):
//   "CSRC" | u32 version=1 | u32 count | u16 N1 | u16 N2 | count x N1*N2 f64, row-major

#include <filesystem>
#include <vector>

#include "csou/scene.hpp"

namespace csou {

inline constexpr std::uint32_t kReconVersion = 1;

void write_reconstructions(const std::filesystem::path& path,
                           const std::vector<HighResGrid>& grids);
std::vector<HighResGrid> read_reconstructions(const std::filesystem::path& path);

}  // namespace csou

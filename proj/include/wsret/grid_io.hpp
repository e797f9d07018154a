#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wsret/voxcore.hpp"

namespace wsret {

// WVOX1 layout: magic "WVOX1", u8 version (1), u8 flags (bit0 = visibility),
// 3 x u32 dims, 3 x f32 scale, occupancy bits, optional visibility bits.
// Bits are packed x-fastest, LSB-first, each grid padded to a byte boundary.
inline constexpr std::size_t kGridHeaderBytes = 5 + 1 + 1 + 12 + 12;

std::vector<std::uint8_t> encode_grid(const VoxelObject& obj);
/// id and family are not stored; the caller restores them from the manifest.
VoxelObject decode_grid(std::span<const std::uint8_t> bytes);

void write_grid(const VoxelObject& obj, const std::filesystem::path& path);
VoxelObject read_grid(const std::filesystem::path& path);

}  // namespace wsret

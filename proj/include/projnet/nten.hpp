#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "projnet/tensor.hpp"

namespace projnet::nten {

// Layout: "NTEN1", u8 dtype (1 = f32, 2 = f64), u8 rank, rank x u64 LE
// dims, then the raw little-endian values.

std::vector<std::uint8_t> encode(const Tensor& t);
/// Throws FormatError on a bad magic, unknown dtype, or size mismatch.
Tensor decode(const std::vector<std::uint8_t>& bytes);

void save(const std::filesystem::path& path, const Tensor& t);
/// Throws IoError when the file cannot be read.
Tensor load(const std::filesystem::path& path);

}  // namespace projnet::nten

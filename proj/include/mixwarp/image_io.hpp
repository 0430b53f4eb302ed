#pragma once

#include <filesystem>

#include "mixwarp/grid_image.hpp"

namespace mixwarp {

/// Reads a PGM (P2/P5, 8 or 16 bit) or grayscale PNG (1-16 bit) file and
/// divides the samples by the format's maximum value. Throws FormatError.
Image read_image(const std::filesystem::path& path);

/// Writes an 8-bit binary PGM; values are clamped to [0,1] and rounded.
void write_pgm(const Image& img, const std::filesystem::path& path);

// Raw float field: "WFR1", u32 rows, u32 cols, u32 reserved (0), then
// rows*cols little-endian float32 values in row-major order.
void write_raw_float(const Image& img, const std::filesystem::path& path);
Image read_raw_float(const std::filesystem::path& path);

}  // namespace mixwarp

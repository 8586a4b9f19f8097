// SPDX-License-Identifier: Apache-2.0
//
// PNG (8/16-bit, via libpng) and PFM codecs. Decoded rasters are planar; row 0
// is the top of the image in every format.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cvm/autodiff/tensor.hpp"

namespace cvm::io {

struct RawImage {
  std::int64_t width = 0, height = 0;
  int channels = 0;   // 1 or 3 after decoding (alpha is dropped, palettes expanded)
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> data;  // planar [channels, H, W]
};

/// Throws IoError naming the path for unreadable or corrupt files.
RawImage read_png(const std::filesystem::path& path);
/// channels 1 or 3, bit_depth 8 or 16; values must fit the bit depth.
void write_png(const std::filesystem::path& path, const RawImage& img);

struct FloatImage {
  std::int64_t width = 0, height = 0;
  int channels = 0;           // 1 ("Pf") or 3 ("PF")
  std::vector<float> data;    // planar [channels, H, W]
};

FloatImage read_pfm(const std::filesystem::path& path);
/// Little-endian, rows stored bottom to top as the format requires.
void write_pfm(const std::filesystem::path& path, const FloatImage& img);

/// [3,H,W] in [0,1]; grey images are replicated across channels.
ad::Tensor load_image(const std::filesystem::path& path);
/// [1,H,W] metres. PFM is read as is; a 16-bit PNG is divided by depth_scale,
/// which must then be given (ConfigError otherwise).
ad::Tensor load_depth(const std::filesystem::path& path, std::optional<double> depth_scale = std::nullopt);

struct LabelMap {
  std::int64_t width = 0, height = 0;
  std::vector<std::int32_t> values;
};
/// Single-channel 8/16-bit PNG of integer labels.
LabelMap load_labels(const std::filesystem::path& path);

/// Quantise planar [3,H,W] values in [0,1] to an 8-bit RGB PNG.
void save_image(const std::filesystem::path& path, std::span<const double> chw, std::int64_t h, std::int64_t w);
void save_labels(const std::filesystem::path& path, std::span<const std::int32_t> labels, std::int64_t h,
                 std::int64_t w);

}  // namespace cvm::io

// SPDX-License-Identifier: Apache-2.0
#include "cvm/dataio/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "cvm/core/error.hpp"

namespace cvm::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors by longjmp; everything that owns memory lives in the
// caller's frame so nothing is skipped on the way out.
bool decode_png(std::FILE* fp, RawImage& out, std::vector<png_byte>& rows) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  rows.resize(stride * static_cast<std::size_t>(out.height));
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(out.height));
  for (std::int64_t y = 0; y < out.height; ++y) ptrs[y] = rows.data() + y * stride;
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode_png(std::FILE* fp, const RawImage& img, std::vector<png_byte>& rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (img.bit_depth == 16) png_set_swap(png);
  const std::size_t stride = static_cast<std::size_t>(img.width * img.channels * (img.bit_depth / 8));
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y) ptrs[y] = rows.data() + y * stride;
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

RawImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("not a PNG file: " + path.string());
  std::rewind(fp.get());
  RawImage img;
  std::vector<png_byte> rows;
  if (!decode_png(fp.get(), img, rows)) throw IoError("corrupt PNG: " + path.string());
  const std::int64_t p = img.width * img.height;
  img.data.resize(static_cast<std::size_t>(p * img.channels));
  for (std::int64_t q = 0; q < p; ++q)
    for (int c = 0; c < img.channels; ++c) {
      const std::size_t k = static_cast<std::size_t>(q * img.channels + c);
      std::uint16_t v;
      if (img.bit_depth == 16) {
        std::memcpy(&v, rows.data() + 2 * k, 2);
      } else {
        v = rows[k];
      }
      img.data[c * p + q] = v;
    }
  return img;
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("write_png: channels must be 1 or 3");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw ContractError("write_png: bit depth must be 8 or 16");
  const std::int64_t p = img.width * img.height;
  if (static_cast<std::int64_t>(img.data.size()) != p * img.channels)
    throw DimensionError("write_png: data does not match extents");
  const int bytes = img.bit_depth / 8;
  std::vector<png_byte> rows(static_cast<std::size_t>(p * img.channels * bytes));
  for (std::int64_t q = 0; q < p; ++q)
    for (int c = 0; c < img.channels; ++c) {
      const std::uint16_t v = img.data[c * p + q];
      const std::size_t k = static_cast<std::size_t>(q * img.channels + c);
      if (bytes == 2) {
        std::memcpy(rows.data() + 2 * k, &v, 2);
      } else {
        if (v > 255) throw ContractError("write_png: value exceeds 8 bits");
        rows[k] = static_cast<png_byte>(v);
      }
    }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  if (!encode_png(fp.get(), img, rows)) throw IoError("failed encoding PNG: " + path.string());
}

FloatImage read_pfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  FloatImage img;
  double scale = 0;
  is >> magic >> img.width >> img.height >> scale;
  if (!is || (magic != "Pf" && magic != "PF") || img.width <= 0 || img.height <= 0 || scale == 0)
    throw IoError("corrupt PFM header: " + path.string());
  is.get();  // the single whitespace byte ending the header
  img.channels = magic == "PF" ? 3 : 1;
  const std::int64_t p = img.width * img.height;
  std::vector<float> raw(static_cast<std::size_t>(p * img.channels));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!is) throw IoError("truncated PFM: " + path.string());
  if (scale > 0) {  // big-endian payload
    for (auto& f : raw) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = __builtin_bswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
  img.data.resize(raw.size());
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        img.data[c * p + y * img.width + x] = raw[((img.height - 1 - y) * img.width + x) * img.channels + c];
  return img;
}

void write_pfm(const std::filesystem::path& path, const FloatImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("write_pfm: channels must be 1 or 3");
  const std::int64_t p = img.width * img.height;
  if (static_cast<std::int64_t>(img.data.size()) != p * img.channels)
    throw DimensionError("write_pfm: data does not match extents");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << '\n' << "-1.0" << '\n';
  std::vector<float> raw(img.data.size());
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        raw[((img.height - 1 - y) * img.width + x) * img.channels + c] = img.data[c * p + y * img.width + x];
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!os) throw IoError("failed writing " + path.string());
}

ad::Tensor load_image(const std::filesystem::path& path) {
  const RawImage img = read_png(path);
  const double maxv = img.bit_depth == 16 ? 65535.0 : 255.0;
  const std::int64_t p = img.width * img.height;
  std::vector<double> out(static_cast<std::size_t>(3 * p));
  for (int c = 0; c < 3; ++c) {
    const int src = img.channels == 3 ? c : 0;
    for (std::int64_t q = 0; q < p; ++q) out[c * p + q] = img.data[src * p + q] / maxv;
  }
  return ad::Tensor::from({3, img.height, img.width}, std::move(out));
}

ad::Tensor load_depth(const std::filesystem::path& path, std::optional<double> depth_scale) {
  if (path.extension() == ".pfm") {
    const FloatImage img = read_pfm(path);
    if (img.channels != 1) throw DataError("depth PFM must have one channel: " + path.string());
    return ad::Tensor::from({1, img.height, img.width}, std::vector<double>(img.data.begin(), img.data.end()));
  }
  const RawImage img = read_png(path);
  if (img.channels != 1 || img.bit_depth != 16) throw DataError("depth PNG must be 16-bit single channel: " + path.string());
  if (!depth_scale) throw ConfigError("16-bit depth PNG needs a declared depth scale: " + path.string());
  if (!(*depth_scale > 0)) throw ConfigError("depth scale must be positive");
  std::vector<double> out(img.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data[i] / *depth_scale;
  return ad::Tensor::from({1, img.height, img.width}, std::move(out));
}

LabelMap load_labels(const std::filesystem::path& path) {
  const RawImage img = read_png(path);
  if (img.channels != 1) throw DataError("label PNG must be single channel: " + path.string());
  return {img.width, img.height, std::vector<std::int32_t>(img.data.begin(), img.data.end())};
}

void save_image(const std::filesystem::path& path, std::span<const double> chw, std::int64_t h, std::int64_t w) {
  if (static_cast<std::int64_t>(chw.size()) != 3 * h * w) throw DimensionError("save_image expects [3,H,W] values");
  RawImage img{w, h, 3, 8, {}};
  img.data.resize(chw.size());
  for (std::size_t i = 0; i < chw.size(); ++i)
    img.data[i] = static_cast<std::uint16_t>(std::lround(std::clamp(chw[i], 0.0, 1.0) * 255.0));
  write_png(path, img);
}

void save_labels(const std::filesystem::path& path, std::span<const std::int32_t> labels, std::int64_t h,
                 std::int64_t w) {
  if (static_cast<std::int64_t>(labels.size()) != h * w) throw DimensionError("save_labels expects H*W labels");
  RawImage img{w, h, 1, 8, {}};
  bool wide = false;
  for (auto l : labels) {
    if (l < 0 || l > 65535) throw DataError("label out of PNG range: " + std::to_string(l));
    wide = wide || l > 255;
  }
  img.bit_depth = wide ? 16 : 8;
  img.data.assign(labels.begin(), labels.end());
  write_png(path, img);
}

}  // namespace cvm::io

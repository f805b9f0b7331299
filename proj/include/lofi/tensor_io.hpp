#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "lofi/image_grid.hpp"

namespace lofi {

// LFT1 framing: "LFT1", dtype byte, ndim byte, ndim x u32 LE dims, then the
// row-major little-endian payload.
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
  DType dtype = DType::F32;

  std::size_t numel() const;
};

// Little-endian u32; read_u32 throws a corrupt-data error on truncation.
void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Rank-2 tensors map to single-channel images, rank-3 to [H][W][C].
GridImage image_from_tensor(const Tensor& t);
Tensor tensor_from_image(const GridImage& img, DType dtype = DType::F32);

// 8-bit grayscale (1 channel) or RGB (3 channels). Import maps [0,255] to
// [0,1]; export maps [lo,hi] to [0,255] with clipping.
GridImage load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const GridImage& img,
              double lo = 0.0, double hi = 1.0);
// Export scaled to the image's own min/max.
void save_png_autoscale(const std::filesystem::path& path, const GridImage& img);

// Dispatches on extension (.png or LFT1 otherwise).
GridImage load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const GridImage& img);

}  // namespace lofi

#include "lofi/tensor_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "lofi/error.hpp"

namespace lofi {

namespace {

constexpr std::array<char, 4> kMagic = {'L', 'F', 'T', '1'};
constexpr std::uint32_t kMaxDims = 8;

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw Error(ErrorCode::Corrupt, "truncated header");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

namespace {

template <class U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

}  // namespace

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.dims.empty() || t.dims.size() > kMaxDims) {
    throw Error(ErrorCode::Shape, "tensor rank must be 1..8");
  }
  if (t.numel() != t.values.size()) {
    throw Error(ErrorCode::Shape, "tensor dims do not match payload");
  }
  os.write(kMagic.data(), 4);
  os.put(static_cast<char>(t.dtype));
  os.put(static_cast<char>(t.dims.size()));
  for (auto d : t.dims) write_u32(os, d);
  if (t.dtype == DType::F32) {
    std::vector<std::uint32_t> raw(t.values.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(t.values[i])));
    }
    os.write(reinterpret_cast<const char*>(raw.data()),
             static_cast<std::streamsize>(raw.size() * 4));
  } else {
    std::vector<std::uint64_t> raw(t.values.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = to_le(std::bit_cast<std::uint64_t>(t.values[i]));
    }
    os.write(reinterpret_cast<const char*>(raw.data()),
             static_cast<std::streamsize>(raw.size() * 8));
  }
  if (!os) throw Error(ErrorCode::Io, "failed writing tensor");
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw Error(ErrorCode::Corrupt, "truncated tensor");
  if (magic != kMagic) throw Error(ErrorCode::Corrupt, "bad tensor magic");
  const int dtype = is.get();
  const int ndim = is.get();
  if (!is) throw Error(ErrorCode::Corrupt, "truncated tensor header");
  if (dtype != 0 && dtype != 1) throw Error(ErrorCode::Corrupt, "unknown tensor dtype");
  if (ndim < 1 || ndim > static_cast<int>(kMaxDims)) {
    throw Error(ErrorCode::Corrupt, "bad tensor rank");
  }
  Tensor t;
  t.dtype = static_cast<DType>(dtype);
  std::uint64_t n = 1;
  for (int i = 0; i < ndim; ++i) {
    t.dims.push_back(read_u32(is));
    n *= t.dims.back();
    if (n > (std::uint64_t{1} << 34)) throw Error(ErrorCode::Corrupt, "tensor too large");
  }
  t.values.resize(n);
  if (t.dtype == DType::F32) {
    std::vector<std::uint32_t> raw(n);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4))) {
      throw Error(ErrorCode::Corrupt, "truncated tensor payload");
    }
    for (std::size_t i = 0; i < n; ++i) {
      t.values[i] = std::bit_cast<float>(to_le(raw[i]));
    }
  } else {
    std::vector<std::uint64_t> raw(n);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 8))) {
      throw Error(ErrorCode::Corrupt, "truncated tensor payload");
    }
    for (std::size_t i = 0; i < n; ++i) {
      t.values[i] = std::bit_cast<double>(to_le(raw[i]));
    }
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_tensor(is);
}

GridImage image_from_tensor(const Tensor& t) {
  if (t.dims.size() == 2) {
    return GridImage(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), 1,
                     t.values);
  }
  if (t.dims.size() == 3) {
    return GridImage(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                     static_cast<int>(t.dims[2]), t.values);
  }
  throw Error(ErrorCode::Shape, "image tensors must have rank 2 or 3");
}

Tensor tensor_from_image(const GridImage& img, DType dtype) {
  Tensor t;
  t.dtype = dtype;
  t.dims = {static_cast<std::uint32_t>(img.height()),
            static_cast<std::uint32_t>(img.width()),
            static_cast<std::uint32_t>(img.channels())};
  t.values.assign(img.data().begin(), img.data().end());
  return t;
}

GridImage load_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error(ErrorCode::Io, "cannot read png " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::Io, "cannot decode png " + path.string());
  }
  GridImage out(static_cast<int>(image.height), static_cast<int>(image.width), channels);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = buffer[i] / 255.0;
  return out;
}

void save_png(const std::filesystem::path& path, const GridImage& img, double lo,
              double hi) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw Error(ErrorCode::Shape, "png export needs 1 or 3 channels");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  std::vector<png_byte> buffer(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::isfinite(img.data()[i]) ? (img.data()[i] - lo) * scale : 0.0;
    buffer[i] = static_cast<png_byte>(std::clamp(std::lround(v), 0L, 255L));
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw Error(ErrorCode::Io, "cannot write png " + path.string());
  }
}

void save_png_autoscale(const std::filesystem::path& path, const GridImage& img) {
  const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  save_png(path, img, *lo, *hi);
}

GridImage load_image(const std::filesystem::path& path) {
  if (path.extension() == ".png") return load_png(path);
  return image_from_tensor(load_tensor(path));
}

void save_image(const std::filesystem::path& path, const GridImage& img) {
  if (path.extension() == ".png") {
    save_png(path, img);
  } else {
    save_tensor(path, tensor_from_image(img));
  }
}

}  // namespace lofi

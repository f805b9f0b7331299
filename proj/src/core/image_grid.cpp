#include "lofi/image_grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "lofi/error.hpp"

namespace lofi {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidInput: return "invalid-input";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Config: return "config";
    case ErrorCode::Io: return "io";
    case ErrorCode::Corrupt: return "corrupt";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Convergence: return "convergence";
  }
  return "unknown";
}

GridImage::GridImage(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw Error(ErrorCode::Shape, "image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

GridImage::GridImage(int height, int width, int channels,
                     std::vector<double> data)
    : height_(height), width_(width), channels_(channels),
      data_(std::move(data)) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw Error(ErrorCode::Shape, "image dimensions must be positive");
  }
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw Error(ErrorCode::Shape, "image data length does not match dims");
  }
}

bool GridImage::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

GridImage GridImage::channel(int ch) const {
  GridImage out(height_, width_, 1);
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) out.at(r, c) = at(r, c, ch);
  }
  return out;
}

Coord pixel_center(int row, int col, int height, int width) {
  return {(col + 0.5) / width, (row + 0.5) / height};
}

namespace {

// Tap positions, weights and weight derivatives along one axis.
struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> w;
  std::array<double, 4> dw;  // d w / d u (continuous index)
};

int wrap(int i, int n, Boundary boundary) {
  if (boundary == Boundary::Periodic) {
    int m = i % n;
    return m < 0 ? m + n : m;
  }
  return std::clamp(i, 0, n - 1);
}

Taps make_taps(double u, int n, Boundary boundary) {
  const double base = std::floor(u);
  const double f = u - base;
  const int i0 = static_cast<int>(base);
  constexpr double a = kKeysA;
  const double f2 = f * f;
  const double f3 = f2 * f;
  Taps t;
  t.w = {a * f3 - 2.0 * a * f2 + a * f,
         (a + 2.0) * f3 - (a + 3.0) * f2 + 1.0,
         -(a + 2.0) * f3 + (2.0 * a + 3.0) * f2 - a * f,
         -a * f3 + a * f2};
  t.dw = {3.0 * a * f2 - 4.0 * a * f + a,
          3.0 * (a + 2.0) * f2 - 2.0 * (a + 3.0) * f,
          -3.0 * (a + 2.0) * f2 + 2.0 * (2.0 * a + 3.0) * f - a,
          -3.0 * a * f2 + 2.0 * a * f};
  for (int j = 0; j < 4; ++j) t.index[j] = wrap(i0 - 1 + j, n, boundary);
  return t;
}

void check_coord(Coord coord) {
  if (!std::isfinite(coord.x) || !std::isfinite(coord.y)) {
    throw Error(ErrorCode::InvalidInput, "non-finite sampling coordinate");
  }
}

}  // namespace

void bicubic_sample(const GridImage& img, Coord coord, Boundary boundary,
                    std::span<double> out) {
  check_coord(coord);
  const int channels = img.channels();
  const Taps tx = make_taps(coord.x * img.width() - 0.5, img.width(), boundary);
  const Taps ty =
      make_taps(coord.y * img.height() - 0.5, img.height(), boundary);
  std::fill(out.begin(), out.begin() + channels, 0.0);
  const double* data = img.data().data();
  for (int j = 0; j < 4; ++j) {
    const double* row =
        data + static_cast<std::size_t>(ty.index[j]) * img.width() * channels;
    for (int i = 0; i < 4; ++i) {
      const double w = ty.w[j] * tx.w[i];
      const double* px = row + static_cast<std::size_t>(tx.index[i]) * channels;
      for (int ch = 0; ch < channels; ++ch) out[ch] += w * px[ch];
    }
  }
}

std::vector<double> bicubic_sample(const GridImage& img,
                                   std::span<const Coord> coords,
                                   Boundary boundary) {
  const auto channels = static_cast<std::size_t>(img.channels());
  std::vector<double> values(coords.size() * channels);
  for (std::size_t b = 0; b < coords.size(); ++b) {
    bicubic_sample(img, coords[b], boundary,
                   std::span<double>(values).subspan(b * channels, channels));
  }
  return values;
}

void bicubic_sample_backward(const GridImage& img, Coord coord,
                             Boundary boundary,
                             std::span<const double> upstream, double& grad_x,
                             double& grad_y, GridImage* image_grad) {
  check_coord(coord);
  const int channels = img.channels();
  const Taps tx = make_taps(coord.x * img.width() - 0.5, img.width(), boundary);
  const Taps ty =
      make_taps(coord.y * img.height() - 0.5, img.height(), boundary);
  const double* data = img.data().data();
  double* grad_data = image_grad ? image_grad->data().data() : nullptr;
  double gu = 0.0;
  double gv = 0.0;
  for (int j = 0; j < 4; ++j) {
    const std::size_t row_offset =
        static_cast<std::size_t>(ty.index[j]) * img.width() * channels;
    for (int i = 0; i < 4; ++i) {
      const std::size_t offset =
          row_offset + static_cast<std::size_t>(tx.index[i]) * channels;
      double dot = 0.0;
      for (int ch = 0; ch < channels; ++ch) dot += upstream[ch] * data[offset + ch];
      gu += ty.w[j] * tx.dw[i] * dot;
      gv += ty.dw[j] * tx.w[i] * dot;
      if (grad_data) {
        const double w = ty.w[j] * tx.w[i];
        for (int ch = 0; ch < channels; ++ch) grad_data[offset + ch] += w * upstream[ch];
      }
    }
  }
  // u = x * W - 0.5
  grad_x = gu * img.width();
  grad_y = gv * img.height();
}

BicubicGradients bicubic_backward(const GridImage& img,
                                  std::span<const Coord> coords,
                                  Boundary boundary,
                                  std::span<const double> upstream) {
  const auto channels = static_cast<std::size_t>(img.channels());
  if (upstream.size() != coords.size() * channels) {
    throw Error(ErrorCode::Shape, "upstream must be [B][C]");
  }
  BicubicGradients out{std::vector<double>(coords.size() * 2),
                       GridImage(img.shape())};
  for (std::size_t b = 0; b < coords.size(); ++b) {
    bicubic_sample_backward(img, coords[b], boundary,
                            upstream.subspan(b * channels, channels),
                            out.coord_grads[2 * b], out.coord_grads[2 * b + 1],
                            &out.image_grad);
  }
  return out;
}

GridImage shift_image(const GridImage& img, int dr, int dc, Boundary boundary) {
  GridImage out(img.shape());
  const int h = img.height();
  const int w = img.width();
  for (int r = 0; r < h; ++r) {
    const int sr = wrap(r - dr, h, boundary);
    for (int c = 0; c < w; ++c) {
      const int sc = wrap(c - dc, w, boundary);
      for (int ch = 0; ch < img.channels(); ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
    }
  }
  return out;
}

GridImage rotate90(const GridImage& img, int quarter_turns) {
  int turns = ((quarter_turns % 4) + 4) % 4;
  GridImage cur = img;
  for (int t = 0; t < turns; ++t) {
    const int h = cur.height();
    const int w = cur.width();
    GridImage next(w, h, cur.channels());
    // (r, c) -> (w - 1 - c, r)
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        for (int ch = 0; ch < cur.channels(); ++ch) {
          next.at(w - 1 - c, r, ch) = cur.at(r, c, ch);
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

GridImage transpose_image(const GridImage& img) {
  GridImage out(img.width(), img.height(), img.channels());
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      for (int ch = 0; ch < img.channels(); ++ch) out.at(c, r, ch) = img.at(r, c, ch);
    }
  }
  return out;
}

}  // namespace lofi

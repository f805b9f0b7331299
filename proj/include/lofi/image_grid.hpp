#pragma once

#include <span>
#include <vector>

namespace lofi {

// Query location in normalized image units. Pixel (r, c) of an H x W image
// has its center at x = (c + 0.5) / W, y = (r + 0.5) / H.
struct Coord {
  double x = 0.0;
  double y = 0.0;
};

enum class Boundary { Clamp, Periodic };

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// H x W x C real image stored row-major as [row][col][channel].
class GridImage {
 public:
  GridImage() = default;
  GridImage(int height, int width, int channels, double fill = 0.0);
  GridImage(int height, int width, int channels, std::vector<double> data);
  explicit GridImage(Shape shape, double fill = 0.0)
      : GridImage(shape.height, shape.width, shape.channels, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  Shape shape() const { return {height_, width_, channels_}; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int row, int col, int ch = 0) {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  double at(int row, int col, int ch = 0) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  bool all_finite() const;

  // Single channel copy.
  GridImage channel(int ch) const;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

Coord pixel_center(int row, int col, int height, int width);

// Keys cubic convolution kernel parameter.
inline constexpr double kKeysA = -0.5;

// Interpolates every channel of `img` at `coord`; `out` must hold
// img.channels() values.
void bicubic_sample(const GridImage& img, Coord coord, Boundary boundary,
                    std::span<double> out);

// Batched form: returns [B][C] values, row-major.
std::vector<double> bicubic_sample(const GridImage& img,
                                   std::span<const Coord> coords,
                                   Boundary boundary);

// Reverse pass for one query. `upstream` holds dL/dvalue per channel. The
// coordinate gradient is returned in (grad_x, grad_y); when `image_grad` is
// non-null the transpose of the sampling weights times `upstream` is added
// into it.
void bicubic_sample_backward(const GridImage& img, Coord coord,
                             Boundary boundary,
                             std::span<const double> upstream, double& grad_x,
                             double& grad_y, GridImage* image_grad);

struct BicubicGradients {
  std::vector<double> coord_grads;  // [B][2]
  GridImage image_grad;             // img-shaped
};

BicubicGradients bicubic_backward(const GridImage& img,
                                  std::span<const Coord> coords,
                                  Boundary boundary,
                                  std::span<const double> upstream);

GridImage shift_image(const GridImage& img, int dr, int dc, Boundary boundary);

// Counter-clockwise rotation by quarter_turns * 90 degrees.
GridImage rotate90(const GridImage& img, int quarter_turns);

GridImage transpose_image(const GridImage& img);

}  // namespace lofi

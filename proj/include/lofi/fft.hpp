#pragma once

#include <complex>
#include <span>
#include <vector>

#include "lofi/image_grid.hpp"

namespace lofi {

using Complex = std::complex<double>;

struct ComplexField {
  int height = 0;
  int width = 0;
  std::vector<Complex> data;

  ComplexField() = default;
  ComplexField(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w) {}

  Complex& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  const Complex& at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
};

bool is_power_of_two(int n);

// Throws a config error suggesting zero-padding when either side is not a
// power of two.
void require_power_of_two(int height, int width, const char* what);

// Unnormalized forward transform.
ComplexField fft2(const ComplexField& field);
// Inverse transform scaled by 1 / (H * W).
ComplexField ifft2(const ComplexField& spectrum);

ComplexField to_complex(const GridImage& img, int channel = 0);
// Two-channel (re, im) image to complex field and back.
ComplexField from_re_im(const GridImage& img);
GridImage to_re_im(const ComplexField& field);
GridImage real_part(const ComplexField& field);

// In-place 1D transforms of power-of-two length; inverse is scaled by 1/n.
void fft1(std::span<Complex> data);
void ifft1(std::span<Complex> data);

// Signed integer frequency index for FFT bin i of an n-point transform.
inline int fft_frequency(int i, int n) { return i < n / 2 ? i : i - n; }

}  // namespace lofi

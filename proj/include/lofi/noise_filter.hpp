#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lofi/image_grid.hpp"
#include "lofi/nn.hpp"

namespace lofi {

// Learnable complex diagonal in the 2D Fourier domain. `count` is 1 when one
// filter is shared by every input channel, else one filter per channel.
template <class T>
struct FourierFilter {
  int size = 0;
  int count = 1;
  bool real_imag = true;  // emit Im(u) alongside Re(u)
  Matrix<T> re;  // [count][size * size], FFT bin order
  Matrix<T> im;

  static FourierFilter identity(int size, int count, bool real_imag = true);
  FourierFilter zeros_like() const;
  int output_channels(int input_channels) const {
    return input_channels * (real_imag ? 3 : 2);
  }
  void collect(const std::string& prefix, std::vector<TensorRef<T>>& out);
  void set_zero();
};

// Per input channel c, u = ifft2(H .* fft2(q_c)); output channels are
// [q_c, Re(u), Im(u)] (or [q_c, Re(u)]) concatenated over c.
template <class T>
GridImage fourier_apply(const GridImage& q, const FourierFilter<T>& filter);

// Accumulates dL/dRe(H), dL/dIm(H) into `grads` given dL/d(output channels).
template <class T>
void fourier_backward(const GridImage& q, const FourierFilter<T>& filter,
                      const GridImage& upstream, FourierFilter<T>& grads);

// |H| of filter `index`, fftshifted so DC sits at the center.
template <class T>
GridImage filter_magnitude(const FourierFilter<T>& filter, int index = 0);

// Writes `<stem>.filter.png` and `<stem>.filter.lft`.
template <class T>
void filter_export(const FourierFilter<T>& filter, const std::filesystem::path& stem);

// Bank of `count` odd-sized spatial kernels, applied as same-size
// correlation with clamped borders.
template <class T>
struct SpatialFilter {
  int size = 0;
  int count = 0;
  Matrix<T> kernels;  // [count][size * size]

  // Every kernel starts as a centered delta.
  static SpatialFilter delta(int size, int count);
  SpatialFilter zeros_like() const;
  int output_channels(int input_channels) const { return input_channels * (count + 1); }
  void collect(const std::string& prefix, std::vector<TensorRef<T>>& out);
  void set_zero();
};

// Per input channel c: [q_c, q_c * h_0, ..., q_c * h_{L-1}].
template <class T>
GridImage spatial_apply(const GridImage& q, const SpatialFilter<T>& filter);

template <class T>
void spatial_backward(const GridImage& q, const SpatialFilter<T>& filter,
                      const GridImage& upstream, SpatialFilter<T>& grads);

}  // namespace lofi

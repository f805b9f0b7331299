#include "lofi/noise_filter.hpp"

#include <algorithm>
#include <cmath>

#include "lofi/error.hpp"
#include "lofi/fft.hpp"
#include "lofi/tensor_io.hpp"

namespace lofi {

template <class T>
FourierFilter<T> FourierFilter<T>::identity(int size, int count, bool real_imag) {
  require_power_of_two(size, size, "Fourier filter");
  if (count < 1) throw Error(ErrorCode::Config, "filter count must be positive");
  FourierFilter f;
  f.size = size;
  f.count = count;
  f.real_imag = real_imag;
  f.re = Matrix<T>::Ones(count, static_cast<Eigen::Index>(size) * size);
  f.im = Matrix<T>::Zero(count, static_cast<Eigen::Index>(size) * size);
  return f;
}

template <class T>
FourierFilter<T> FourierFilter<T>::zeros_like() const {
  FourierFilter f = *this;
  f.set_zero();
  return f;
}

template <class T>
void FourierFilter<T>::collect(const std::string& prefix, std::vector<TensorRef<T>>& out) {
  const std::vector<int> shape{count, size, size};
  out.push_back({prefix + ".re", re.data(), shape});
  out.push_back({prefix + ".im", im.data(), shape});
}

template <class T>
void FourierFilter<T>::set_zero() {
  re.setZero();
  im.setZero();
}

namespace {

template <class T>
void check_filter_shape(const GridImage& q, const FourierFilter<T>& filter) {
  if (q.height() != filter.size || q.width() != filter.size) {
    throw Error(ErrorCode::Shape, "Fourier filter is " + std::to_string(filter.size) + "x" +
                                      std::to_string(filter.size) + " but input is " +
                                      std::to_string(q.height()) + "x" +
                                      std::to_string(q.width()));
  }
  if (filter.count != 1 && filter.count != q.channels()) {
    throw Error(ErrorCode::Shape, "per-channel filter count does not match input channels");
  }
}

}  // namespace

template <class T>
GridImage fourier_apply(const GridImage& q, const FourierFilter<T>& filter) {
  check_filter_shape(q, filter);
  const int stride = filter.real_imag ? 3 : 2;
  GridImage out(q.height(), q.width(), q.channels() * stride);
  for (int c = 0; c < q.channels(); ++c) {
    const int fi = filter.count == 1 ? 0 : c;
    ComplexField spec = fft2(to_complex(q, c));
    for (std::size_t k = 0; k < spec.data.size(); ++k) {
      spec.data[k] *= Complex(filter.re(fi, static_cast<Eigen::Index>(k)),
                              filter.im(fi, static_cast<Eigen::Index>(k)));
    }
    const ComplexField u = ifft2(spec);
    for (int r = 0; r < q.height(); ++r) {
      for (int x = 0; x < q.width(); ++x) {
        out.at(r, x, c * stride) = q.at(r, x, c);
        out.at(r, x, c * stride + 1) = u.at(r, x).real();
        if (filter.real_imag) out.at(r, x, c * stride + 2) = u.at(r, x).imag();
      }
    }
  }
  return out;
}

template <class T>
void fourier_backward(const GridImage& q, const FourierFilter<T>& filter,
                      const GridImage& upstream, FourierFilter<T>& grads) {
  check_filter_shape(q, filter);
  const int stride = filter.real_imag ? 3 : 2;
  if (upstream.height() != q.height() || upstream.width() != q.width() ||
      upstream.channels() != q.channels() * stride) {
    throw Error(ErrorCode::Shape, "Fourier filter upstream has the wrong shape");
  }
  const double inv_n = 1.0 / (static_cast<double>(q.height()) * q.width());
  for (int c = 0; c < q.channels(); ++c) {
    const int fi = filter.count == 1 ? 0 : c;
    const ComplexField spec = fft2(to_complex(q, c));
    ComplexField g(q.height(), q.width());
    for (int r = 0; r < q.height(); ++r) {
      for (int x = 0; x < q.width(); ++x) {
        const double gi = filter.real_imag ? upstream.at(r, x, c * stride + 2) : 0.0;
        g.at(r, x) = {upstream.at(r, x, c * stride + 1), gi};
      }
    }
    const ComplexField ghat = fft2(g);
    // L = Re sum_k H_k W_k with W_k = Q_k conj(G_k) / N.
    for (std::size_t k = 0; k < spec.data.size(); ++k) {
      const Complex w = spec.data[k] * std::conj(ghat.data[k]) * inv_n;
      grads.re(fi, static_cast<Eigen::Index>(k)) += static_cast<T>(w.real());
      grads.im(fi, static_cast<Eigen::Index>(k)) -= static_cast<T>(w.imag());
    }
  }
}

template <class T>
GridImage filter_magnitude(const FourierFilter<T>& filter, int index) {
  const int m = filter.size;
  GridImage img(m, m, 1);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      const auto k = static_cast<Eigen::Index>(r) * m + c;
      const double mag = std::hypot(static_cast<double>(filter.re(index, k)),
                                    static_cast<double>(filter.im(index, k)));
      img.at((r + m / 2) % m, (c + m / 2) % m) = mag;
    }
  }
  return img;
}

template <class T>
void filter_export(const FourierFilter<T>& filter, const std::filesystem::path& stem) {
  const GridImage mag = filter_magnitude(filter);
  const double peak = *std::max_element(mag.data().begin(), mag.data().end());
  save_png(stem.string() + ".filter.png", mag, 0.0, peak > 0.0 ? peak : 1.0);
  save_tensor(stem.string() + ".filter.lft", tensor_from_image(mag));
}

template <class T>
SpatialFilter<T> SpatialFilter<T>::delta(int size, int count) {
  if (size < 1 || size % 2 == 0) throw Error(ErrorCode::Config, "spatial kernels must be odd-sized");
  if (count < 1) throw Error(ErrorCode::Config, "spatial filter count must be positive");
  SpatialFilter f;
  f.size = size;
  f.count = count;
  f.kernels = Matrix<T>::Zero(count, static_cast<Eigen::Index>(size) * size);
  const int center = (size / 2) * size + size / 2;
  for (int l = 0; l < count; ++l) f.kernels(l, center) = T(1);
  return f;
}

template <class T>
SpatialFilter<T> SpatialFilter<T>::zeros_like() const {
  SpatialFilter f = *this;
  f.set_zero();
  return f;
}

template <class T>
void SpatialFilter<T>::collect(const std::string& prefix, std::vector<TensorRef<T>>& out) {
  out.push_back({prefix + ".kernels", kernels.data(), {count, size, size}});
}

template <class T>
void SpatialFilter<T>::set_zero() {
  kernels.setZero();
}

template <class T>
GridImage spatial_apply(const GridImage& q, const SpatialFilter<T>& filter) {
  const int stride = filter.count + 1;
  const int half = filter.size / 2;
  const int h = q.height();
  const int w = q.width();
  GridImage out(h, w, q.channels() * stride);
  for (int c = 0; c < q.channels(); ++c) {
    for (int r = 0; r < h; ++r) {
      for (int x = 0; x < w; ++x) {
        out.at(r, x, c * stride) = q.at(r, x, c);
        for (int l = 0; l < filter.count; ++l) {
          double acc = 0.0;
          for (int i = 0; i < filter.size; ++i) {
            const int rr = std::clamp(r + i - half, 0, h - 1);
            for (int j = 0; j < filter.size; ++j) {
              const int cc = std::clamp(x + j - half, 0, w - 1);
              acc += filter.kernels(l, i * filter.size + j) * q.at(rr, cc, c);
            }
          }
          out.at(r, x, c * stride + 1 + l) = acc;
        }
      }
    }
  }
  return out;
}

template <class T>
void spatial_backward(const GridImage& q, const SpatialFilter<T>& filter,
                      const GridImage& upstream, SpatialFilter<T>& grads) {
  const int stride = filter.count + 1;
  if (upstream.channels() != q.channels() * stride || upstream.height() != q.height() ||
      upstream.width() != q.width()) {
    throw Error(ErrorCode::Shape, "spatial filter upstream has the wrong shape");
  }
  const int half = filter.size / 2;
  const int h = q.height();
  const int w = q.width();
  for (int c = 0; c < q.channels(); ++c) {
    for (int l = 0; l < filter.count; ++l) {
      for (int i = 0; i < filter.size; ++i) {
        for (int j = 0; j < filter.size; ++j) {
          double acc = 0.0;
          for (int r = 0; r < h; ++r) {
            const int rr = std::clamp(r + i - half, 0, h - 1);
            for (int x = 0; x < w; ++x) {
              const int cc = std::clamp(x + j - half, 0, w - 1);
              acc += upstream.at(r, x, c * stride + 1 + l) * q.at(rr, cc, c);
            }
          }
          grads.kernels(l, i * filter.size + j) += static_cast<T>(acc);
        }
      }
    }
  }
}

#define LOFI_INSTANTIATE_FILTER(T)                                                        \
  template struct FourierFilter<T>;                                                       \
  template struct SpatialFilter<T>;                                                       \
  template GridImage fourier_apply(const GridImage&, const FourierFilter<T>&);            \
  template void fourier_backward(const GridImage&, const FourierFilter<T>&,               \
                                 const GridImage&, FourierFilter<T>&);                    \
  template GridImage filter_magnitude(const FourierFilter<T>&, int);                      \
  template void filter_export(const FourierFilter<T>&, const std::filesystem::path&);     \
  template GridImage spatial_apply(const GridImage&, const SpatialFilter<T>&);            \
  template void spatial_backward(const GridImage&, const SpatialFilter<T>&,               \
                                 const GridImage&, SpatialFilter<T>&);

LOFI_INSTANTIATE_FILTER(float)
LOFI_INSTANTIATE_FILTER(double)

}  // namespace lofi

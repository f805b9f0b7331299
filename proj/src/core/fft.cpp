#include "lofi/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <string>
#include <tuple>

#include "lofi/error.hpp"

namespace lofi {

namespace {

// FFTW planning is not thread-safe; execution with new-array execute is.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(int rank, int n0, int n1, int sign) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(rank, n0, n1, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const std::size_t n = static_cast<std::size_t>(n0) * (rank == 2 ? n1 : 1);
    auto* buf = fftw_alloc_complex(n);
    fftw_plan plan = rank == 2
        ? fftw_plan_dft_2d(n0, n1, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED)
        : fftw_plan_dft_1d(n0, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int, int>, fftw_plan> plans_;
};

PlanCache& plans() {
  static PlanCache cache;
  return cache;
}

fftw_complex* as_fftw(Complex* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

void require_power_of_two(int height, int width, const char* what) {
  if (!is_power_of_two(height) || !is_power_of_two(width)) {
    throw Error(ErrorCode::Config,
                std::string(what) + " needs power-of-two dims, got " +
                    std::to_string(height) + "x" + std::to_string(width) +
                    "; zero-pad the input to the next power of two");
  }
}

ComplexField fft2(const ComplexField& field) {
  require_power_of_two(field.height, field.width, "fft2");
  ComplexField out = field;
  fftw_execute_dft(plans().get(2, field.height, field.width, FFTW_FORWARD),
                   as_fftw(out.data.data()), as_fftw(out.data.data()));
  return out;
}

ComplexField ifft2(const ComplexField& spectrum) {
  require_power_of_two(spectrum.height, spectrum.width, "ifft2");
  ComplexField out = spectrum;
  fftw_execute_dft(plans().get(2, spectrum.height, spectrum.width, FFTW_BACKWARD),
                   as_fftw(out.data.data()), as_fftw(out.data.data()));
  const double scale = 1.0 / (static_cast<double>(spectrum.height) * spectrum.width);
  for (auto& v : out.data) v *= scale;
  return out;
}

ComplexField to_complex(const GridImage& img, int channel) {
  ComplexField f(img.height(), img.width());
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) f.at(r, c) = img.at(r, c, channel);
  }
  return f;
}

ComplexField from_re_im(const GridImage& img) {
  if (img.channels() != 2) throw Error(ErrorCode::Shape, "expected (re, im) channels");
  ComplexField f(img.height(), img.width());
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) f.at(r, c) = {img.at(r, c, 0), img.at(r, c, 1)};
  }
  return f;
}

GridImage to_re_im(const ComplexField& field) {
  GridImage img(field.height, field.width, 2);
  for (int r = 0; r < field.height; ++r) {
    for (int c = 0; c < field.width; ++c) {
      img.at(r, c, 0) = field.at(r, c).real();
      img.at(r, c, 1) = field.at(r, c).imag();
    }
  }
  return img;
}

GridImage real_part(const ComplexField& field) {
  GridImage img(field.height, field.width, 1);
  for (std::size_t i = 0; i < field.data.size(); ++i) img.data()[i] = field.data[i].real();
  return img;
}

void fft1(std::span<Complex> data) {
  const int n = static_cast<int>(data.size());
  require_power_of_two(n, 1, "fft1");
  fftw_execute_dft(plans().get(1, n, 1, FFTW_FORWARD), as_fftw(data.data()),
                   as_fftw(data.data()));
}

void ifft1(std::span<Complex> data) {
  const int n = static_cast<int>(data.size());
  require_power_of_two(n, 1, "ifft1");
  fftw_execute_dft(plans().get(1, n, 1, FFTW_BACKWARD), as_fftw(data.data()),
                   as_fftw(data.data()));
  for (auto& v : data) v /= static_cast<double>(n);
}

}  // namespace lofi

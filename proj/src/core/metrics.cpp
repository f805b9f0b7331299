#include "lofi/metrics.hpp"

#include <cmath>
#include <limits>

#include "lofi/error.hpp"

namespace lofi {

namespace {

void require_same_shape(const GridImage& x, const GridImage& ref) {
  if (x.shape() != ref.shape()) throw Error(ErrorCode::Shape, "metric inputs differ in shape");
}

constexpr int kWindow = 11;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable valid-mode filtering of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::vector<double>& win) {
  const int oh = h - kWindow + 1;
  const int ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += win[k] * plane[static_cast<std::size_t>(r) * w + c + k];
      rows[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += win[k] * rows[static_cast<std::size_t>(r + k) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const GridImage& x, const GridImage& ref, double peak) {
  require_same_shape(x, ref);
  if (!(peak > 0.0)) throw Error(ErrorCode::InvalidInput, "PSNR peak must be positive");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - ref.data()[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const GridImage& x, const GridImage& ref, double peak) {
  require_same_shape(x, ref);
  const int h = x.height();
  const int w = x.width();
  if (h < kWindow || w < kWindow) {
    throw Error(ErrorCode::Shape, "SSIM needs images of at least 11x11 pixels");
  }
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const auto win = gaussian_window();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  double total = 0.0;
  for (int ch = 0; ch < x.channels(); ++ch) {
    std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * w + c;
        a[i] = x.at(r, c, ch);
        b[i] = ref.at(r, c, ch);
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
      }
    }
    const auto mu_a = filter_valid(a, h, w, win);
    const auto mu_b = filter_valid(b, h, w, win);
    const auto e_aa = filter_valid(aa, h, w, win);
    const auto e_bb = filter_valid(bb, h, w, win);
    const auto e_ab = filter_valid(ab, h, w, win);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
      sum += num / den;
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / x.channels();
}

void MetricReport::add(std::string name, const GridImage& x, const GridImage& ref) {
  rows.push_back({std::move(name), psnr(x, ref, peak), ssim(x, ref, peak)});
}

double MetricReport::mean_psnr() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr_db;
  return s / static_cast<double>(rows.size());
}

double MetricReport::mean_ssim() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.ssim;
  return s / static_cast<double>(rows.size());
}

}  // namespace lofi

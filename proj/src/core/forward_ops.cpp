#include "lofi/forward_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lofi/error.hpp"

namespace lofi {

double noise_sigma(const GridImage& x, const NoiseSpec& spec) {
  if (spec.kind == NoiseSpec::Kind::Sigma) {
    if (!(spec.value >= 0.0)) throw Error(ErrorCode::InvalidInput, "noise sigma must be >= 0");
    return spec.value;
  }
  if (!std::isfinite(spec.value)) throw Error(ErrorCode::InvalidInput, "SNR must be finite");
  double energy = 0.0;
  for (double v : x.data()) energy += v * v;
  return std::sqrt(energy / static_cast<double>(x.size())) / std::pow(10.0, spec.value / 20.0);
}

GridImage awgn(const GridImage& x, const NoiseSpec& spec, Rng& rng) {
  if (!x.all_finite()) throw Error(ErrorCode::InvalidInput, "awgn input contains NaN/Inf");
  const double sigma = noise_sigma(x, spec);
  GridImage out = x;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : out.data()) v += dist(rng);
  return out;
}

GridImage LinearOperator::data_prox(const GridImage&, const GridImage&, double) const {
  throw Error(ErrorCode::InvalidInput, name() + " has no closed-form data proximal step");
}

GridImage LinearOperator::simulate(const GridImage& f, const NoiseSpec& noise, Rng& rng) const {
  return awgn(apply(f), noise, rng);
}

void LinearOperator::check_domain(const GridImage& f) const {
  if (f.shape() != domain()) throw Error(ErrorCode::Shape, name() + ": input has the wrong shape");
}

void LinearOperator::check_range(const GridImage& q) const {
  if (q.shape() != range()) {
    throw Error(ErrorCode::Shape, name() + ": measurement has the wrong shape");
  }
}

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidInput, "alpha must be positive");
}

// Unitary transforms (1 / sqrt(HW) both ways).
ComplexField ufft2(const ComplexField& x) {
  ComplexField out = fft2(x);
  const double s = 1.0 / std::sqrt(static_cast<double>(x.height) * x.width);
  for (auto& v : out.data) v *= s;
  return out;
}

ComplexField uifft2(const ComplexField& x) {
  ComplexField out = ifft2(x);
  const double s = std::sqrt(static_cast<double>(x.height) * x.width);
  for (auto& v : out.data) v *= s;
  return out;
}

}  // namespace

GridImage IdentityOp::apply(const GridImage& f) const {
  check_domain(f);
  return f;
}

GridImage IdentityOp::adjoint(const GridImage& q) const {
  check_range(q);
  return q;
}

GridImage IdentityOp::data_prox(const GridImage& z, const GridImage& q, double alpha) const {
  check_alpha(alpha);
  check_domain(z);
  check_range(q);
  GridImage out(shape_);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = (q.data()[i] + alpha * z.data()[i]) / (1.0 + alpha);
  }
  return out;
}

GridImage DiagonalOp::apply(const GridImage& f) const {
  check_domain(f);
  GridImage out = f;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= weights_.data()[i];
  return out;
}

GridImage DiagonalOp::data_prox(const GridImage& z, const GridImage& q, double alpha) const {
  check_alpha(alpha);
  check_domain(z);
  check_range(q);
  GridImage out(weights_.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = weights_.data()[i];
    out.data()[i] = (d * q.data()[i] + alpha * z.data()[i]) / (d * d + alpha);
  }
  return out;
}

InpaintOp::InpaintOp(GridImage mask) : DiagonalOp(std::move(mask)) {
  for (double v : weights_.data()) {
    if (v != 0.0 && v != 1.0) throw Error(ErrorCode::InvalidInput, "inpainting mask must be binary");
  }
}

GridImage random_pixel_mask(int height, int width, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidInput, "mask probability outside [0, 1]");
  GridImage mask(height, width, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : mask.data()) v = u(rng) < p ? 0.0 : 1.0;
  return mask;
}

FourierMaskOp::FourierMaskOp(GridImage mask) : mask_(std::move(mask)) {
  require_power_of_two(mask_.height(), mask_.width(), "Fourier mask operator");
  if (mask_.channels() != 1) throw Error(ErrorCode::Shape, "Fourier mask must be single-channel");
  for (double v : mask_.data()) {
    if (v != 0.0 && v != 1.0) throw Error(ErrorCode::InvalidInput, "Fourier mask must be binary");
  }
}

GridImage FourierMaskOp::apply(const GridImage& f) const {
  check_domain(f);
  ComplexField spec = ufft2(to_complex(f));
  for (std::size_t k = 0; k < spec.data.size(); ++k) spec.data[k] *= mask_.data()[k];
  return to_re_im(spec);
}

GridImage FourierMaskOp::adjoint(const GridImage& q) const {
  check_range(q);
  ComplexField spec = from_re_im(q);
  for (std::size_t k = 0; k < spec.data.size(); ++k) spec.data[k] *= mask_.data()[k];
  return real_part(uifft2(spec));
}

GridImage FourierMaskOp::data_prox(const GridImage& z, const GridImage& q, double alpha) const {
  check_alpha(alpha);
  check_domain(z);
  check_range(q);
  // On real images A*A acts as the symmetrized mask (m_k + m_-k) / 2.
  GridImage rhs = adjoint(q);
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs.data()[i] += alpha * z.data()[i];
  ComplexField spec = ufft2(to_complex(rhs));
  const int h = mask_.height();
  const int w = mask_.width();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double m = 0.5 * (mask_.at(r, c) + mask_.at((h - r) % h, (w - c) % w));
      spec.at(r, c) /= (m + alpha);
    }
  }
  return real_part(uifft2(spec));
}

GridImage uv_mask_gen(int size, int tracks, Rng& rng) {
  require_power_of_two(size, size, "uv mask");
  if (tracks < 1) throw Error(ErrorCode::InvalidInput, "uv mask needs at least one track");
  GridImage mask(size, size, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto mark = [&](int ky, int kx) {
    const int r = ((ky % size) + size) % size;
    const int c = ((kx % size) + size) % size;
    mask.at(r, c) = 1.0;
    mask.at((size - r) % size, (size - c) % size) = 1.0;
  };
  mark(0, 0);
  const double pi = std::numbers::pi;
  for (int t = 0; t < tracks; ++t) {
    const double a = (0.05 + 0.40 * u(rng)) * size;
    const double b = a * (0.2 + 0.8 * u(rng));
    const double phi = pi * u(rng);
    const double start = 2.0 * pi * u(rng);
    const double span = pi * (0.3 + 0.7 * u(rng));
    const int samples = static_cast<int>(std::ceil(4.0 * a * span)) + 1;
    for (int s = 0; s <= samples; ++s) {
      const double th = start + span * s / samples;
      const double ex = a * std::cos(th);
      const double ey = b * std::sin(th);
      const double kx = ex * std::cos(phi) - ey * std::sin(phi);
      const double ky = ex * std::sin(phi) + ey * std::cos(phi);
      const int ix = static_cast<int>(std::lround(kx));
      const int iy = static_cast<int>(std::lround(ky));
      if (std::abs(ix) >= size / 2 || std::abs(iy) >= size / 2) continue;
      mark(iy, ix);
    }
  }
  return mask;
}

double mask_coverage(const GridImage& mask) {
  double n = 0.0;
  for (double v : mask.data()) n += v;
  return n / static_cast<double>(mask.size());
}

ComplexField ks_multiplier(int size) {
  require_power_of_two(size, size, "KS multiplier");
  ComplexField d(size, size);
  for (int r = 0; r < size; ++r) {
    const double ky = fft_frequency(r, size);
    for (int c = 0; c < size; ++c) {
      const double kx = fft_frequency(c, size);
      const double k2 = kx * kx + ky * ky;
      d.at(r, c) = k2 == 0.0 ? Complex(1.0, 0.0) : Complex(kx * kx - ky * ky, 2.0 * kx * ky) / k2;
    }
  }
  return d;
}

KsOp::KsOp(int size) : size_(size), d_(ks_multiplier(size)) {}

GridImage KsOp::apply(const GridImage& kappa) const {
  check_domain(kappa);
  ComplexField spec = fft2(to_complex(kappa));
  for (std::size_t k = 0; k < spec.data.size(); ++k) spec.data[k] *= d_.data[k];
  return to_re_im(ifft2(spec));
}

GridImage KsOp::adjoint(const GridImage& gamma) const {
  check_range(gamma);
  ComplexField spec = fft2(from_re_im(gamma));
  for (std::size_t k = 0; k < spec.data.size(); ++k) spec.data[k] *= std::conj(d_.data[k]);
  return real_part(ifft2(spec));
}

GridImage KsOp::data_prox(const GridImage& z, const GridImage& q, double alpha) const {
  check_alpha(alpha);
  check_domain(z);
  GridImage out = adjoint(q);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = (out.data()[i] + alpha * z.data()[i]) / (1.0 + alpha);
  }
  return out;
}

GridImage ks_forward(const GridImage& kappa) {
  if (kappa.height() != kappa.width()) throw Error(ErrorCode::Shape, "KS needs a square field");
  return KsOp(kappa.height()).apply(kappa);
}

GridImage ks_inverse(const GridImage& gamma) {
  if (gamma.height() != gamma.width()) throw Error(ErrorCode::Shape, "KS needs a square field");
  return KsOp(gamma.height()).adjoint(gamma);
}

double ks_noise_sigma(double sigma_e, double theta_arcmin, int n_grid, double n_gal) {
  if (!(sigma_e > 0.0 && theta_arcmin > 0.0 && n_grid > 0 && n_gal > 0.0)) {
    throw Error(ErrorCode::InvalidInput, "KS noise parameters must be positive");
  }
  const double pixel_arcmin = theta_arcmin / n_grid;
  return sigma_e / std::sqrt(pixel_arcmin * pixel_arcmin * n_gal);
}

std::vector<double> uniform_angles(int count) {
  if (count < 1) throw Error(ErrorCode::InvalidInput, "need at least one projection angle");
  std::vector<double> a(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) a[i] = std::numbers::pi * i / count;
  return a;
}

RadonOp::RadonOp(int size, std::vector<double> angles) : size_(size), angles_(std::move(angles)) {
  if (size < 1) throw Error(ErrorCode::InvalidInput, "radon size must be positive");
  if (angles_.empty()) throw Error(ErrorCode::InvalidInput, "radon needs at least one angle");
  for (std::size_t i = 1; i < angles_.size(); ++i) {
    if (!(angles_[i] > angles_[i - 1])) {
      throw Error(ErrorCode::InvalidInput, "radon angles must be strictly increasing");
    }
  }
  steps_ = static_cast<int>(std::ceil((size_ / std::numbers::sqrt2 + 1.0) / 0.5));
}

namespace {

constexpr double kRayStep = 0.5;

// Visits the bilinear taps of every ray sample for (angle, detector).
template <class Fn>
void for_each_ray_tap(int n, double angle, int detector, int steps, Fn&& fn) {
  const double center = 0.5 * (n - 1);
  const double t = detector - center;
  const double ct = std::cos(angle);
  const double st = std::sin(angle);
  for (int k = -steps; k <= steps; ++k) {
    const double s = k * kRayStep;
    const double x = center + t * ct - s * st;
    const double y = center + t * st + s * ct;
    const double xf = std::floor(x);
    const double yf = std::floor(y);
    const int x0 = static_cast<int>(xf);
    const int y0 = static_cast<int>(yf);
    if (x0 < -1 || y0 < -1 || x0 >= n || y0 >= n) continue;
    const double fx = x - xf;
    const double fy = y - yf;
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int i = 0; i < 4; ++i) {
      if (xs[i] < 0 || ys[i] < 0 || xs[i] >= n || ys[i] >= n) continue;
      fn(ys[i], xs[i], w[i] * kRayStep);
    }
  }
}

}  // namespace

GridImage RadonOp::apply(const GridImage& f) const {
  check_domain(f);
  GridImage sino(static_cast<int>(angles_.size()), size_, 1);
  for (std::size_t a = 0; a < angles_.size(); ++a) {
    for (int j = 0; j < size_; ++j) {
      double acc = 0.0;
      for_each_ray_tap(size_, angles_[a], j, steps_,
                       [&](int r, int c, double w) { acc += w * f.at(r, c); });
      sino.at(static_cast<int>(a), j) = acc;
    }
  }
  return sino;
}

GridImage RadonOp::adjoint(const GridImage& sino) const {
  check_range(sino);
  GridImage f(size_, size_, 1);
  for (std::size_t a = 0; a < angles_.size(); ++a) {
    for (int j = 0; j < size_; ++j) {
      const double v = sino.at(static_cast<int>(a), j);
      if (v == 0.0) continue;
      for_each_ray_tap(size_, angles_[a], j, steps_,
                       [&](int r, int c, double w) { f.at(r, c) += w * v; });
    }
  }
  return f;
}

GridImage radon(const GridImage& f, const std::vector<double>& angles) {
  if (f.height() != f.width() || f.channels() != 1) {
    throw Error(ErrorCode::Shape, "radon needs a square single-channel image");
  }
  return RadonOp(f.height(), angles).apply(f);
}

GridImage disk_mask(int size) {
  GridImage m(size, size, 1);
  const double center = 0.5 * (size - 1);
  const double radius = 0.5 * size;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      m.at(r, c) = std::hypot(r - center, c - center) <= radius ? 1.0 : 0.0;
    }
  }
  return m;
}

GridImage fbp(const GridImage& sino, const std::vector<double>& angles, FbpFilter filter) {
  if (angles.empty()) throw Error(ErrorCode::InvalidInput, "fbp needs at least one angle");
  if (sino.height() != static_cast<int>(angles.size()) || sino.channels() != 1) {
    throw Error(ErrorCode::Shape, "sinogram rows must match the angle count");
  }
  const int n = sino.width();
  int padded = 1;
  while (padded < 2 * n) padded *= 2;
  std::vector<double> response(static_cast<std::size_t>(padded));
  for (int k = 0; k < padded; ++k) {
    const double f = static_cast<double>(fft_frequency(k, padded)) / padded;
    double h = 2.0 * std::abs(f);
    if (filter == FbpFilter::Hann) h *= 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * f);
    response[k] = h;
  }
  GridImage filtered(sino.height(), n, 1);
  std::vector<Complex> row(static_cast<std::size_t>(padded));
  for (int a = 0; a < sino.height(); ++a) {
    std::fill(row.begin(), row.end(), Complex{});
    for (int j = 0; j < n; ++j) row[j] = sino.at(a, j);
    fft1(row);
    for (int k = 0; k < padded; ++k) row[k] *= response[k];
    ifft1(row);
    for (int j = 0; j < n; ++j) filtered.at(a, j) = row[j].real();
  }
  GridImage out(n, n, 1);
  const double center = 0.5 * (n - 1);
  const double radius = 0.5 * n;
  const double scale = std::numbers::pi / (2.0 * static_cast<double>(angles.size()));
  for (std::size_t a = 0; a < angles.size(); ++a) {
    const double ct = std::cos(angles[a]);
    const double st = std::sin(angles[a]);
    for (int r = 0; r < n; ++r) {
      const double y = r - center;
      for (int c = 0; c < n; ++c) {
        const double x = c - center;
        if (std::hypot(x, y) > radius) continue;
        const double pos = x * ct + y * st + center;
        const double pf = std::floor(pos);
        const int j0 = static_cast<int>(pf);
        const double w = pos - pf;
        double v = 0.0;
        if (j0 >= 0 && j0 < n) v += (1.0 - w) * filtered.at(static_cast<int>(a), j0);
        if (j0 + 1 >= 0 && j0 + 1 < n) v += w * filtered.at(static_cast<int>(a), j0 + 1);
        out.at(r, c) += v;
      }
    }
  }
  for (auto& v : out.data()) v *= scale;
  return out;
}

}  // namespace lofi

#include "lofi/phantoms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lofi/error.hpp"
#include "lofi/fft.hpp"

namespace lofi {

PhantomKind parse_phantom_kind(const std::string& name) {
  if (name == "ellipses") return PhantomKind::Ellipses;
  if (name == "blobs") return PhantomKind::Blobs;
  if (name == "texture") return PhantomKind::Texture;
  throw Error(ErrorCode::Config, "unknown phantom kind '" + name + "' (ellipses|blobs|texture)");
}

namespace {

struct Ellipse {
  double cx, cy, a, b, angle, value;
};

bool inside(const Ellipse& e, double x, double y) {
  const double dx = x - e.cx;
  const double dy = y - e.cy;
  const double c = std::cos(e.angle);
  const double s = std::sin(e.angle);
  const double u = (dx * c + dy * s) / e.a;
  const double v = (-dx * s + dy * c) / e.b;
  return u * u + v * v <= 1.0;
}

GridImage ellipses(int size, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Ellipse> shapes;
  // Outer body, then inner structures; coordinates in [-1, 1].
  const double body_a = 0.70 + 0.2 * u(rng);
  const double body_b = 0.60 + 0.2 * u(rng);
  shapes.push_back({0.0, 0.0, body_a, body_b, std::numbers::pi * u(rng), 0.3 + 0.3 * u(rng)});
  const int inner = 5 + static_cast<int>(u(rng) * 6);
  for (int i = 0; i < inner; ++i) {
    const double r = 0.6 * std::sqrt(u(rng));
    const double t = 2.0 * std::numbers::pi * u(rng);
    const double value = (u(rng) < 0.7 ? 1.0 : -1.0) * (0.1 + 0.35 * u(rng));
    shapes.push_back({r * std::cos(t), r * std::sin(t), 0.04 + 0.3 * u(rng), 0.04 + 0.3 * u(rng),
                      std::numbers::pi * u(rng), value});
  }
  GridImage img(size, size, 1);
  const double radius = 0.5 * size;
  const double center = 0.5 * (size - 1);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      if (std::hypot(r - center, c - center) > radius) continue;
      const double x = (c + 0.5) / size * 2.0 - 1.0;
      const double y = (r + 0.5) / size * 2.0 - 1.0;
      double v = 0.0;
      for (const auto& e : shapes) {
        if (inside(e, x, y)) v += e.value;
      }
      img.at(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

// Real field with Gaussian-shaped spectrum |k| around `peak` (cycles per
// image) of width `width`; DC removed, unit standard deviation.
GridImage band_limited(int size, double peak, double width, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexField field(size, size);
  for (auto& v : field.data) v = n(rng);
  ComplexField spec = fft2(field);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double k = std::hypot(fft_frequency(r, size), fft_frequency(c, size));
      const double d = (k - peak) / width;
      spec.at(r, c) *= (r == 0 && c == 0) ? 0.0 : std::exp(-0.5 * d * d);
    }
  }
  GridImage out = real_part(ifft2(spec));
  double mean = 0.0;
  for (double v : out.data()) mean += v;
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (double v : out.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(out.size()));
  for (auto& v : out.data()) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return out;
}

GridImage texture(int size, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Spectra are fixed in cycles per image so every resolution samples the
  // same continuous texture statistics.
  const GridImage noise = band_limited(size, 5.0 + 10.0 * u(rng), 4.0, rng);
  // Piecewise-constant layer from random half-planes and discs.
  GridImage regions(size, size, 1);
  const int cuts = 3 + static_cast<int>(u(rng) * 4);
  for (int i = 0; i < cuts; ++i) {
    const double value = u(rng) - 0.5;
    const bool disc = u(rng) < 0.5;
    const double cx = u(rng);
    const double cy = u(rng);
    const double rad = 0.1 + 0.3 * u(rng);
    const double angle = 2.0 * std::numbers::pi * u(rng);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const double x = (c + 0.5) / size;
        const double y = (r + 0.5) / size;
        const bool hit = disc ? std::hypot(x - cx, y - cy) < rad
                              : (x - cx) * std::cos(angle) + (y - cy) * std::sin(angle) > 0.0;
        if (hit) regions.at(r, c) += value;
      }
    }
  }
  GridImage img(size, size, 1);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.data()[i] = 0.35 * noise.data()[i] + regions.data()[i];
  }
  const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  const double low = *lo;
  const double span = *hi - *lo;
  for (auto& v : img.data()) v = span > 0.0 ? (v - low) / span : 0.5;
  return img;
}

}  // namespace

GridImage phantom_gen(PhantomKind kind, int size, Rng& rng) {
  if (size < 1) throw Error(ErrorCode::InvalidInput, "phantom size must be positive");
  switch (kind) {
    case PhantomKind::Ellipses:
      return ellipses(size, rng);
    case PhantomKind::Blobs:
      require_power_of_two(size, size, "blob phantom");
      return band_limited(size, 0.0, 4.0 + 4.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng), rng);
    case PhantomKind::Texture:
      require_power_of_two(size, size, "texture phantom");
      return texture(size, rng);
  }
  throw Error(ErrorCode::InvalidInput, "unknown phantom kind");
}

}  // namespace lofi

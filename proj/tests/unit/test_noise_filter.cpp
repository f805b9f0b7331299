#include <cmath>

#include "doctest.h"
#include "lofi/error.hpp"
#include "lofi/fft.hpp"
#include "lofi/noise_filter.hpp"
#include "test_support.hpp"

using namespace lofi;
using namespace lofi::testing;

namespace {

// Direct O(N^2) DFT.
ComplexField naive_dft(const ComplexField& f) {
  ComplexField out(f.height, f.width);
  for (int u = 0; u < f.height; ++u) {
    for (int v = 0; v < f.width; ++v) {
      Complex s = 0.0;
      for (int r = 0; r < f.height; ++r) {
        for (int c = 0; c < f.width; ++c) {
          const double ph = -2 * M_PI * (double(u) * r / f.height + double(v) * c / f.width);
          s += f.at(r, c) * Complex(std::cos(ph), std::sin(ph));
        }
      }
      out.at(u, v) = s;
    }
  }
  return out;
}

ComplexField random_field(int h, int w, Rng& rng) {
  ComplexField f(h, w);
  for (auto& v : f.data) v = {uniform(rng, -1, 1), uniform(rng, -1, 1)};
  return f;
}

double max_diff(const ComplexField& a, const ComplexField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

template <class Filter>
double weighted_output(const GridImage& q, const Filter& f, const GridImage& up) {
  if constexpr (std::is_same_v<Filter, FourierFilter<double>>) return dot(fourier_apply(q, f), up);
  else return dot(spatial_apply(q, f), up);
}

}  // namespace

TEST_SUITE("fft") {
  TEST_CASE("delta transforms to all ones and constants to a DC spike") {
    ComplexField d(8, 4);
    d.at(0, 0) = 1.0;
    for (const auto& v : fft2(d).data) CHECK(std::abs(v - Complex(1.0)) < 1e-12);
    ComplexField k(4, 8);
    for (auto& v : k.data) v = 2.0;
    const ComplexField s = fft2(k);
    CHECK(std::abs(s.at(0, 0) - Complex(64.0)) < 1e-12);
    for (std::size_t i = 1; i < s.data.size(); ++i) CHECK(std::abs(s.data[i]) < 1e-12);
  }

  TEST_CASE("fft2 matches a direct DFT and inverts") {
    Rng rng(1);
    for (int trial = 0; trial < 5; ++trial) {
      const int h = 1 << uniform_int(rng, 0, 4);
      const int w = 1 << uniform_int(rng, 0, 4);
      const ComplexField f = random_field(h, w, rng);
      CHECK(max_diff(fft2(f), naive_dft(f)) < 1e-10);
      CHECK(max_diff(ifft2(fft2(f)), f) < 1e-12);
    }
  }

  TEST_CASE("Parseval holds") {
    Rng rng(2);
    const ComplexField f = random_field(16, 8, rng);
    const ComplexField s = fft2(f);
    double a = 0.0;
    double b = 0.0;
    for (const auto& v : f.data) a += std::norm(v);
    for (const auto& v : s.data) b += std::norm(v);
    CHECK(relative_error(b / (16 * 8), a) < 1e-12);
  }

  TEST_CASE("non power-of-two sizes are a config error") {
    try {
      fft2(ComplexField(12, 8));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Config);
    }
  }
}

TEST_SUITE("noise_filter") {
  TEST_CASE("identity Fourier filter returns q, q, 0") {
    Rng rng(3);
    const GridImage q = random_image(16, 16, 2, rng);
    const GridImage out = fourier_apply(q, FourierFilter<double>::identity(16, 1));
    CHECK(out.channels() == 6);
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) {
        for (int ch = 0; ch < 2; ++ch) {
          CHECK(out.at(r, c, 3 * ch) == q.at(r, c, ch));
          CHECK(std::abs(out.at(r, c, 3 * ch + 1) - q.at(r, c, ch)) < 1e-12);
          CHECK(std::abs(out.at(r, c, 3 * ch + 2)) < 1e-12);
        }
      }
    }
  }

  TEST_CASE("zero filter blanks the filtered channels") {
    Rng rng(4);
    const GridImage q = random_image(8, 8, 1, rng);
    FourierFilter<double> f = FourierFilter<double>::identity(8, 1, false);
    f.set_zero();
    const GridImage out = fourier_apply(q, f);
    CHECK(out.channels() == 2);
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) CHECK(out.at(r, c, 1) == 0.0);
    }
  }

  TEST_CASE("DC-only filter yields the image mean") {
    Rng rng(5);
    const GridImage q = random_image(8, 8, 1, rng);
    FourierFilter<double> f = FourierFilter<double>::identity(8, 1);
    f.set_zero();
    f.re(0, 0) = 1.0;
    double mean = 0.0;
    for (double v : q.data()) mean += v / 64;
    const GridImage out = fourier_apply(q, f);
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) CHECK(std::abs(out.at(r, c, 1) - mean) < 1e-12);
    }
  }

  TEST_CASE("size mismatch is a shape error") {
    const GridImage q(8, 8, 1);
    CHECK_THROWS_AS(fourier_apply(q, FourierFilter<double>::identity(16, 1)), Error);
    CHECK_THROWS_AS(FourierFilter<double>::identity(12, 1), Error);
  }

  TEST_CASE("filter backward: zero upstream and zero input") {
    Rng rng(6);
    const GridImage q = random_image(8, 8, 1, rng);
    const FourierFilter<double> f = FourierFilter<double>::identity(8, 1);
    FourierFilter<double> g = f.zeros_like();
    fourier_backward(q, f, GridImage(8, 8, 3), g);
    CHECK(g.re.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.im.cwiseAbs().maxCoeff() == 0.0);
    fourier_backward(GridImage(8, 8, 1), f, random_image(8, 8, 3, rng), g);
    CHECK(g.re.cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("Fourier filter gradients match central differences") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      const bool ri = trial % 2 == 0;
      const int channels = uniform_int(rng, 1, 2);
      const int count = uniform_int(rng, 0, 1) ? channels : 1;
      const GridImage q = random_image(8, 8, channels, rng);
      FourierFilter<double> f = FourierFilter<double>::identity(8, count, ri);
      f.re += random_matrix<double>(count, 64, rng, 0.5);
      f.im += random_matrix<double>(count, 64, rng, 0.5);
      const GridImage up = random_image(8, 8, f.output_channels(channels), rng, -1, 1);
      FourierFilter<double> g = f.zeros_like();
      fourier_backward(q, f, up, g);
      std::vector<double> analytic;
      std::vector<double> numeric;
      for (Eigen::Index k = 0; k < f.re.size(); ++k) {
        analytic.push_back(g.re.data()[k]);
        numeric.push_back(central_difference([&] { return weighted_output(q, f, up); }, f.re.data()[k], 1e-6));
        analytic.push_back(g.im.data()[k]);
        numeric.push_back(central_difference([&] { return weighted_output(q, f, up); }, f.im.data()[k], 1e-6));
      }
      CHECK(relative_error(analytic, numeric) < 1e-7);
    }
  }

  TEST_CASE("Fourier filtering is linear and shift covariant") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
      FourierFilter<double> f = FourierFilter<double>::identity(16, 1);
      f.re += random_matrix<double>(1, 256, rng);
      f.im += random_matrix<double>(1, 256, rng);
      const GridImage a = random_image(16, 16, 1, rng);
      const GridImage b = random_image(16, 16, 1, rng);
      const double s = uniform(rng, -2, 2);
      CHECK(max_abs_diff(fourier_apply(axpy(s, a, b), f), axpy(s, fourier_apply(a, f), fourier_apply(b, f))) <
            1e-12);
      const int dr = uniform_int(rng, -16, 16);
      const int dc = uniform_int(rng, -16, 16);
      CHECK(max_abs_diff(fourier_apply(shift_image(a, dr, dc, Boundary::Periodic), f),
                         shift_image(fourier_apply(a, f), dr, dc, Boundary::Periodic)) < 1e-12);
    }
  }

  TEST_CASE("magnitude display is flat for identity and black for zero") {
    FourierFilter<double> f = FourierFilter<double>::identity(8, 1);
    const GridImage flat = filter_magnitude(f);
    for (double v : flat.data()) CHECK(v == 1.0);
    f.set_zero();
    const GridImage black = filter_magnitude(f);
    for (double v : black.data()) CHECK(v == 0.0);
  }

  TEST_CASE("gradient steps on real data keep the magnitude centrally symmetric") {
    Rng rng(9);
    FourierFilter<double> f = FourierFilter<double>::identity(16, 1, false);
    for (int step = 0; step < 10; ++step) {
      const GridImage q = random_image(16, 16, 1, rng);
      const GridImage up = random_image(16, 16, 2, rng, -1, 1);
      FourierFilter<double> g = f.zeros_like();
      fourier_backward(q, f, up, g);
      f.re -= 0.1 * g.re;
      f.im -= 0.1 * g.im;
    }
    const GridImage mag = filter_magnitude(f);
    // DC sits at (8, 8); frequency (u, v) maps to (8 + u, 8 + v).
    for (int r = 1; r < 16; ++r) {
      for (int c = 1; c < 16; ++c) CHECK(std::abs(mag.at(r, c) - mag.at(16 - r, 16 - c)) < 1e-12);
    }
  }

  TEST_CASE("delta spatial kernel copies the input") {
    Rng rng(10);
    const GridImage q = random_image(6, 7, 2, rng);
    const GridImage out = spatial_apply(q, SpatialFilter<double>::delta(3, 2));
    CHECK(out.channels() == 6);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 7; ++c) {
        for (int ch = 0; ch < 2; ++ch) {
          for (int l = 0; l < 3; ++l) CHECK(out.at(r, c, 3 * ch + l) == q.at(r, c, ch));
        }
      }
    }
    SpatialFilter<double> z = SpatialFilter<double>::delta(3, 1);
    z.set_zero();
    const GridImage zo = spatial_apply(q, z);
    for (int r = 0; r < 6; ++r) CHECK(zo.at(r, 0, 1) == 0.0);
    CHECK_THROWS_AS(SpatialFilter<double>::delta(4, 1), Error);
  }

  TEST_CASE("box kernel matches a clamped neighborhood mean") {
    Rng rng(11);
    const GridImage q = random_image(5, 6, 1, rng);
    SpatialFilter<double> f = SpatialFilter<double>::delta(3, 1);
    f.kernels.setConstant(1.0 / 9);
    const GridImage out = spatial_apply(q, f);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 6; ++c) {
        double s = 0.0;
        for (int i = -1; i <= 1; ++i) {
          for (int j = -1; j <= 1; ++j) s += q.at(std::clamp(r + i, 0, 4), std::clamp(c + j, 0, 5)) / 9;
        }
        CHECK(std::abs(out.at(r, c, 1) - s) < 1e-12);
      }
    }
  }

  TEST_CASE("spatial kernel gradients match central differences") {
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
      const GridImage q = random_image(6, 6, 2, rng);
      SpatialFilter<double> f = SpatialFilter<double>::delta(3, 2);
      f.kernels += random_matrix<double>(2, 9, rng);
      const GridImage up = random_image(6, 6, 6, rng, -1, 1);
      SpatialFilter<double> g = f.zeros_like();
      spatial_backward(q, f, up, g);
      std::vector<double> analytic;
      std::vector<double> numeric;
      for (Eigen::Index k = 0; k < f.kernels.size(); ++k) {
        analytic.push_back(g.kernels.data()[k]);
        numeric.push_back(central_difference([&] { return weighted_output(q, f, up); }, f.kernels.data()[k], 1e-6));
      }
      CHECK(relative_error(analytic, numeric) < 1e-8);
    }
  }
}

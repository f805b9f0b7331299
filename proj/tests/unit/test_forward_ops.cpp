#include <cmath>
#include <memory>
#include <numbers>

#include "doctest.h"
#include "lofi/admm.hpp"
#include "lofi/error.hpp"
#include "lofi/forward_ops.hpp"
#include "lofi/metrics.hpp"
#include "lofi/phantoms.hpp"
#include "test_support.hpp"

using namespace lofi;
using namespace lofi::testing;

namespace {

GridImage random_in(Shape s, Rng& rng) { return random_image(s.height, s.width, s.channels, rng, -1, 1); }

// <A x, y> - <x, A* y> relative to the larger side.
double adjoint_mismatch(const LinearOperator& op, Rng& rng) {
  const GridImage x = random_in(op.domain(), rng);
  const GridImage y = random_in(op.range(), rng);
  const double lhs = dot(op.apply(x), y);
  const double rhs = dot(x, op.adjoint(y));
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-12);
}

GridImage binary_mask(int h, int w, double p, Rng& rng) {
  GridImage m(h, w, 1);
  for (auto& v : m.data()) v = uniform(rng, 0, 1) < p ? 1.0 : 0.0;
  return m;
}

double mean(const GridImage& img) {
  double s = 0.0;
  for (double v : img.data()) s += v;
  return s / static_cast<double>(img.size());
}

}  // namespace

TEST_SUITE("forward_ops") {
  TEST_CASE("awgn: zero sigma and SNR closed form") {
    Rng rng(1);
    const GridImage x = random_image(16, 16, 1, rng);
    CHECK(max_abs_diff(awgn(x, NoiseSpec::sigma(0.0), rng), x) == 0.0);
    const double sig = noise_sigma(x, NoiseSpec::snr_db(20.0));
    CHECK(relative_error(sig, norm(x) / 16.0 / 10.0) < 1e-12);
    CHECK(noise_sigma(x, NoiseSpec::sigma(0.3)) == 0.3);
    CHECK_THROWS_AS(noise_sigma(x, NoiseSpec::sigma(-1.0)), Error);
  }

  TEST_CASE("empirical SNR matches the request") {
    Rng rng(2);
    const GridImage x = random_image(128, 128, 1, rng, 0.5, 1.0);
    for (double db : {0.0, 10.0, 30.0}) {
      const GridImage y = awgn(x, NoiseSpec::snr_db(db), rng);
      const double e = norm(axpy(-1.0, x, y));
      CHECK(std::abs(20 * std::log10(norm(x) / e) - db) < 0.1);
    }
  }

  TEST_CASE("inpainting data step closed form") {
    GridImage mask(1, 2, 1);
    mask.at(0, 0) = 1.0;
    const InpaintOp op(mask);
    GridImage q(1, 2, 1);
    q.at(0, 0) = 1.0;
    q.at(0, 1) = 7.0;
    const GridImage z(1, 2, 1, 0.0);
    const GridImage f = data_solve(op, q, z, 0.05);
    CHECK(f.at(0, 0) == doctest::Approx(1.0 / 1.05));
    CHECK(f.at(0, 1) == 0.0);
  }

  TEST_CASE("empty inpainting mask returns the prior") {
    Rng rng(3);
    const InpaintOp op(GridImage(8, 8, 1, 0.0));
    const GridImage z = random_image(8, 8, 1, rng);
    CHECK(max_abs_diff(data_solve(op, random_image(8, 8, 1, rng), z, 0.3), z) < 1e-15);
  }

  TEST_CASE("non-binary masks are rejected") {
    CHECK_THROWS_AS(InpaintOp(GridImage(4, 4, 1, 0.5)), Error);
    CHECK_THROWS_AS(FourierMaskOp(GridImage(4, 4, 1, 2.0)), Error);
  }

  TEST_CASE("closed-form data steps agree with conjugate gradients") {
    Rng rng(4);
    std::vector<std::unique_ptr<LinearOperator>> ops;
    ops.push_back(std::make_unique<IdentityOp>(Shape{8, 8, 2}));
    ops.push_back(std::make_unique<InpaintOp>(binary_mask(8, 8, 0.6, rng)));
    ops.push_back(std::make_unique<FourierMaskOp>(binary_mask(8, 8, 0.5, rng)));
    ops.push_back(std::make_unique<FourierMaskOp>(uv_mask_gen(16, 3, rng)));
    ops.push_back(std::make_unique<KsOp>(16));
    for (const auto& op : ops) {
      CAPTURE(op->name());
      for (double alpha : {0.05, 1.0}) {
        const GridImage q = random_in(op->range(), rng);
        const GridImage z = random_in(op->domain(), rng);
        const GridImage a = data_solve(*op, q, z, alpha);
        const GridImage b = data_solve(*op, q, z, alpha, true);
        CHECK(max_abs_diff(a, b) < 1e-8);
      }
    }
  }

  TEST_CASE("every operator passes the adjoint test") {
    Rng rng(5);
    std::vector<std::unique_ptr<LinearOperator>> ops;
    ops.push_back(std::make_unique<IdentityOp>(Shape{5, 7, 3}));
    ops.push_back(std::make_unique<InpaintOp>(binary_mask(9, 6, 0.4, rng)));
    ops.push_back(std::make_unique<FourierMaskOp>(binary_mask(16, 16, 0.3, rng)));
    ops.push_back(std::make_unique<KsOp>(32));
    ops.push_back(std::make_unique<RadonOp>(24, uniform_angles(17)));
    for (const auto& op : ops) {
      CAPTURE(op->name());
      for (int trial = 0; trial < 5; ++trial) CHECK(adjoint_mismatch(*op, rng) < 1e-10);
    }
  }

  TEST_CASE("Fourier mask limits") {
    Rng rng(6);
    const GridImage f = random_image(8, 8, 1, rng);
    const FourierMaskOp full(GridImage(8, 8, 1, 1.0));
    CHECK(relative_error(norm(full.apply(f)), norm(f)) < 1e-12);
    CHECK(max_abs_diff(full.adjoint(full.apply(f)), f) < 1e-12);
    const FourierMaskOp none(GridImage(8, 8, 1, 0.0));
    CHECK(norm(none.apply(f)) == 0.0);
  }

  TEST_CASE("uv masks are Hermitian, include DC and are reproducible") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      const int n = 1 << uniform_int(rng, 4, 7);
      const GridImage m = uv_mask_gen(n, uniform_int(rng, 1, 20), rng);
      CHECK(m.at(0, 0) == 1.0);
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) CHECK(m.at(r, c) == m.at((n - r) % n, (n - c) % n));
      }
      CHECK(mask_coverage(m) > 0.0);
      CHECK(mask_coverage(m) < 1.0);
    }
    Rng a(11);
    Rng b(11);
    CHECK(max_abs_diff(uv_mask_gen(64, 12, a), uv_mask_gen(64, 12, b)) == 0.0);
    CHECK_THROWS_AS(uv_mask_gen(64, 0, a), Error);
  }

  TEST_CASE("KS multiplier values") {
    const ComplexField d = ks_multiplier(8);
    CHECK(d.at(0, 0) == Complex(1.0, 0.0));
    CHECK(std::abs(d.at(0, 1) - Complex(1.0, 0.0)) < 1e-15);   // kx = 1
    CHECK(std::abs(d.at(1, 0) - Complex(-1.0, 0.0)) < 1e-15);  // ky = 1
    CHECK(std::abs(d.at(1, 1) - Complex(0.0, 1.0)) < 1e-15);
    CHECK(std::abs(d.at(7, 1) - Complex(0.0, -1.0)) < 1e-15);  // ky = -1
    for (const auto& v : d.data) CHECK(std::abs(std::abs(v) - 1.0) < 1e-14);
  }

  TEST_CASE("KS inversion undoes the forward model") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
      const GridImage k = random_image(32, 32, 1, rng, -1, 1);
      CHECK(max_abs_diff(ks_inverse(ks_forward(k)), k) < 1e-12);
    }
    const GridImage flat(16, 16, 1, 0.3);
    const GridImage g = ks_forward(flat);
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) {
        CHECK(std::abs(g.at(r, c, 0) - 0.3) < 1e-12);
        CHECK(std::abs(g.at(r, c, 1)) < 1e-12);
      }
    }
  }

  TEST_CASE("KS of a pure horizontal cosine keeps its sign in gamma1") {
    const int n = 16;
    GridImage k(n, n, 1);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) k.at(r, c) = std::cos(2 * std::numbers::pi * 2 * c / n);
    }
    const GridImage g = ks_forward(k);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        CHECK(std::abs(g.at(r, c, 0) - k.at(r, c)) < 1e-12);
        CHECK(std::abs(g.at(r, c, 1)) < 1e-12);
      }
    }
    // Along y the sign of gamma1 flips.
    const GridImage gt = ks_forward(transpose_image(k));
    CHECK(std::abs(gt.at(0, 0, 0) + 1.0) < 1e-12);
  }

  TEST_CASE("KS pixel noise level") {
    CHECK(std::abs(ks_noise_sigma(0.37, 300, 128, 30) - 0.02882) < 5e-5);
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      const double se = uniform(rng, 0.1, 0.5);
      const double th = uniform(rng, 10, 500);
      const int n = uniform_int(rng, 16, 512);
      const double ng = uniform(rng, 1, 100);
      const double s = ks_noise_sigma(se, th, n, ng);
      CHECK(ks_noise_sigma(se, 2 * th, n, ng) == doctest::Approx(s / 2));
      CHECK(ks_noise_sigma(se, th, n, 4 * ng) == doctest::Approx(s / 2));
      CHECK(ks_noise_sigma(2 * se, th, n, ng) > s);
    }
    CHECK_THROWS_AS(ks_noise_sigma(0.3, 0.0, 128, 30), Error);
  }

  TEST_CASE("Radon transform basics") {
    const RadonOp op(32, uniform_angles(8));
    CHECK(norm(op.apply(GridImage(32, 32, 1))) == 0.0);
    CHECK_THROWS_AS(RadonOp(32, {0.5, 0.2}), Error);
    CHECK_THROWS_AS(RadonOp(32, {}), Error);
    CHECK_THROWS_AS(uniform_angles(0), Error);
    Rng rng(10);
    const GridImage a = random_image(32, 32, 1, rng);
    const GridImage b = random_image(32, 32, 1, rng);
    CHECK(max_abs_diff(op.apply(axpy(2.0, a, b)), axpy(2.0, op.apply(a), op.apply(b))) < 1e-10);
  }

  TEST_CASE("disk projection matches its chord length") {
    const int n = 64;
    const double radius = 20.0;
    GridImage disk(n, n, 1);
    const double center = 0.5 * (n - 1);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        if (std::hypot(r - center, c - center) <= radius) disk.at(r, c) = 1.0;
      }
    }
    const auto angles = uniform_angles(6);
    const GridImage sino = radon(disk, angles);
    for (int a = 0; a < 6; ++a) {
      for (int j = 0; j < n; ++j) {
        const double t = j - center;
        if (std::abs(t) > radius - 3) continue;
        const double chord = 2 * std::sqrt(radius * radius - t * t);
        CHECK(std::abs(sino.at(a, j) - chord) < 0.02 * chord + 0.5);
      }
    }
  }

  TEST_CASE("filtered backprojection reconstructs an ellipse phantom") {
    Rng rng(11);
    const GridImage f = phantom_gen(PhantomKind::Ellipses, 128, rng);
    const auto angles = uniform_angles(180);
    for (FbpFilter filter : {FbpFilter::Ramp, FbpFilter::Hann}) {
      const GridImage rec = fbp(radon(f, angles), angles, filter);
      CHECK(psnr(rec, f) >= 25.0);
    }
  }
}

TEST_SUITE("phantoms") {
  TEST_CASE("phantoms are deterministic per seed") {
    for (PhantomKind kind : {PhantomKind::Ellipses, PhantomKind::Blobs, PhantomKind::Texture}) {
      Rng a(3);
      Rng b(3);
      CHECK(max_abs_diff(phantom_gen(kind, 32, a), phantom_gen(kind, 32, b)) == 0.0);
    }
    CHECK(parse_phantom_kind("blobs") == PhantomKind::Blobs);
    CHECK_THROWS_AS(parse_phantom_kind("zebra"), Error);
  }

  TEST_CASE("ellipses lie in [0, 1] inside the disk") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const GridImage f = phantom_gen(PhantomKind::Ellipses, 64, rng);
      const GridImage disk = disk_mask(64);
      double mx = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        CHECK(f.data()[i] >= 0.0);
        CHECK(f.data()[i] <= 1.0);
        if (disk.data()[i] == 0.0) CHECK(f.data()[i] == 0.0);
        mx = std::max(mx, f.data()[i]);
      }
      CHECK(mx > 0.0);
    }
  }

  TEST_CASE("blobs have zero mean and unit deviation; textures span [0, 1]") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
      const GridImage b = phantom_gen(PhantomKind::Blobs, 64, rng);
      CHECK(std::abs(mean(b)) < 1e-12);
      CHECK(std::abs(norm(b) / 64 - 1.0) < 1e-9);
      const GridImage t = phantom_gen(PhantomKind::Texture, 64, rng);
      const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
      CHECK(*lo == doctest::Approx(0.0));
      CHECK(*hi == doctest::Approx(1.0));
    }
  }
}

// Acceptance runs. Each criterion prints one PASS/FAIL line and writes a
// JSON record (acceptance_<n>.json) into the working directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lofi/admm.hpp"
#include "lofi/error.hpp"
#include "lofi/fft.hpp"
#include "lofi/forward_ops.hpp"
#include "lofi/memprobe.hpp"
#include "lofi/metrics.hpp"
#include "lofi/model.hpp"
#include "lofi/noise_filter.hpp"
#include "lofi/phantoms.hpp"
#include "lofi/runs.hpp"
#include "test_support.hpp"

using namespace lofi;
using namespace lofi::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Options {
  double scale = 1.0;  // multiplies training lengths; 1 for the real run
  int threads = 1;
  fs::path workdir = ".";
};

struct Outcome {
  bool pass = false;
  json detail = json::object();
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int scaled(const Options& o, int steps) {
  return std::max(1, static_cast<int>(std::lround(steps * o.scale)));
}

// Default-small model: 9 rings x 9 points, hidden widths 128.
LofiConfig small_model(int size) {
  LofiConfig c;
  c.input_size = size;
  c.rings = 9;
  c.points_per_ring = 9;
  c.branch_count = 9;
  c.branch_hidden = {128, 128, 128};
  c.branch_out = 32;
  c.mixer_hidden = {128, 128, 128};
  c.ccpg_hidden = {128, 128};
  c.inr_hidden = {128, 128};
  return c;
}

TrainConfig single_object_training(const Options& o, int steps, double lr, int val_every) {
  TrainConfig t;
  t.lr = lr;
  t.object_batch = 1;
  t.pixel_batch = 512;
  t.pixel_steps = 1;
  t.max_steps = scaled(o, steps);
  t.epochs = 1 << 30;
  t.val_every = val_every;
  t.threads = o.threads;
  return t;
}

double mean_psnr(const std::vector<GridImage>& xs, const std::vector<TrainPair>& pairs) {
  double s = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) s += psnr(xs[i], pairs[i].target, auto_peak(pairs[i].target));
  return s / static_cast<double>(pairs.size());
}

double observation_psnr(const std::vector<TrainPair>& pairs) {
  std::vector<GridImage> obs;
  for (const auto& p : pairs) obs.push_back(p.observation);
  return mean_psnr(obs, pairs);
}

std::vector<TrainPair> denoise_pairs(int count, int size, double sigma, Rng& rng) {
  std::vector<TrainPair> pairs;
  for (int i = 0; i < count; ++i) {
    GridImage clean = phantom_gen(PhantomKind::Texture, size, rng);
    GridImage noisy = awgn(clean, NoiseSpec::sigma(sigma), rng);
    pairs.push_back({std::move(noisy), std::move(clean)});
  }
  return pairs;
}

std::vector<TrainPair> simulated(const Options& o, const std::string& name, json cfg) {
  const fs::path dir = o.workdir / ("acceptance_data_" + name);
  fs::remove_all(dir);
  cfg["output"] = dir.string();
  run_command("simulate", cfg);
  auto pairs = load_pairs(list_dataset(dir));
  fs::remove_all(dir);
  return pairs;
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

Outcome gradient_integrity(const Options&) {
  Rng rng(1001);
  const int instances = 24;
  const int samples = 20;
  std::map<std::string, std::pair<double, double>> worst;  // group -> (double, single)
  std::map<std::string, std::size_t> checked;
  for (int i = 0; i < instances; ++i) {
    LofiConfig c = tiny_config(16);
    c.precision = Precision::F64;
    c.geometry = i % 2 ? GeometryMode::Ccpg : GeometryMode::Learnable;
    c.filter = FilterMode::Fourier;
    c.filter_real_imag = uniform_int(rng, 0, 1) == 1;
    c.inr = true;
    c.residual = uniform_int(rng, 0, 1) == 1;
    c.channels = uniform_int(rng, 1, 2);
    c.boundary = uniform_int(rng, 0, 1) ? Boundary::Periodic : Boundary::Clamp;
    auto m = LofiModel<double>::create(c);
    randomize_parameters(m, rng, 0.1);
    randomize_filter(m, rng, 0.2);
    scale_inr_head(m, 0.1);
    const GridImage base = smooth_image(16, 16, rng);
    GridImage q(16, 16, c.channels);
    for (int r = 0; r < 16; ++r) {
      for (int col = 0; col < 16; ++col) {
        for (int ch = 0; ch < c.channels; ++ch) q.at(r, col, ch) = base.at(r, col) * (1.0 + 0.3 * ch);
      }
    }
    const auto coords = interior_coords(6, rng, 0.3);
    const Matrix<double> up = random_matrix<double>(6, c.channels, rng);

    auto mf = cast_model<float>(m);
    LofiParams<double> gd = projected_gradient(m, q, coords, up);
    LofiParams<float> gf = projected_gradient(mf, q, coords, up);
    std::vector<TensorRef<double>> gd_refs;
    std::vector<TensorRef<float>> gf_refs;
    gd.collect(gd_refs);
    gf.collect(gf_refs);
    auto params = m.parameters();
    std::map<std::string, std::vector<double>> numeric;
    std::map<std::string, std::vector<double>> analytic_d;
    std::map<std::string, std::vector<double>> analytic_f;
    for (std::size_t t = 0; t < params.size(); ++t) {
      const std::string g = group_of(params[t].name);
      // Base offsets only train under learnable geometry.
      if (g == "geometry" && c.geometry != GeometryMode::Learnable) continue;
      const int n = static_cast<int>(params[t].size());
      for (int s = 0; s < std::min(samples, n); ++s) {
        const int k = samples >= n ? s : uniform_int(rng, 0, n - 1);
        numeric[g].push_back(central_difference(
            [&] { return projected_output(m, q, coords, up); }, params[t].data[k], 1e-6));
        analytic_d[g].push_back(gd_refs[t].data[k]);
        analytic_f[g].push_back(static_cast<double>(gf_refs[t].data[k]));
      }
    }
    for (const auto& [g, num] : numeric) {
      auto& w = worst[g];
      w.first = std::max(w.first, relative_error(analytic_d[g], num));
      w.second = std::max(w.second, relative_error(analytic_f[g], num));
      checked[g] += num.size();
    }
  }

  // Coordinate gradients of the bicubic sampler.
  double bicubic_worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const int channels = uniform_int(rng, 1, 3);
    const GridImage img = random_image(uniform_int(rng, 6, 12), uniform_int(rng, 6, 12), channels, rng);
    const Boundary boundary = uniform_int(rng, 0, 1) ? Boundary::Periodic : Boundary::Clamp;
    std::vector<Coord> coords = interior_coords(5, rng, 0.05);
    std::vector<double> up(coords.size() * channels);
    for (auto& v : up) v = uniform(rng, -1, 1);
    const BicubicGradients g = bicubic_backward(img, coords, boundary, up);
    auto objective = [&] {
      const auto vals = bicubic_sample(img, coords, boundary);
      double s = 0.0;
      for (std::size_t k = 0; k < vals.size(); ++k) s += vals[k] * up[k];
      return s;
    };
    std::vector<double> numeric;
    for (auto& c : coords) {
      numeric.push_back(central_difference(objective, c.x, 1e-6));
      numeric.push_back(central_difference(objective, c.y, 1e-6));
    }
    bicubic_worst = std::max(bicubic_worst, relative_error(g.coord_grads, numeric));
  }

  Outcome out;
  out.pass = bicubic_worst < 1e-6;
  json groups = json::object();
  for (const auto& [g, w] : worst) {
    groups[g] = {{"double", w.first}, {"single", w.second}, {"entries", checked[g]}};
    out.pass = out.pass && w.first < 1e-6 && w.second < 1e-4;
  }
  for (const char* required : {"core", "ccpg", "geometry", "filter", "inr"}) {
    out.pass = out.pass && worst.count(required) == 1;
  }
  out.detail = {{"instances", instances}, {"groups", groups}, {"bicubic_coords", bicubic_worst},
                {"tolerance_double", 1e-6}, {"tolerance_single", 1e-4}};
  return out;
}

// ---------------------------------------------------------------------------
// 2. Operator algebra

double inner(const GridImage& a, const GridImage& b) { return dot(a, b); }

GridImage random_like(Shape s, Rng& rng) { return random_image(s.height, s.width, s.channels, rng, -1, 1); }

Outcome operator_algebra(const Options&) {
  Rng rng(2002);
  double adjoint_worst = 0.0;
  double prox_worst = 0.0;
  std::map<std::string, double> per_op;
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<double> angles = uniform_angles(7 + trial);
    std::vector<double> jittered;
    for (int k = 0; k < 9; ++k) jittered.push_back((k + uniform(rng, 0.0, 0.9)) * std::numbers::pi / 9);
    GridImage weights = random_image(8, 6, 2, rng, -2, 2);
    std::vector<std::unique_ptr<LinearOperator>> ops;
    ops.push_back(std::make_unique<IdentityOp>(Shape{8, 6, 2}));
    ops.push_back(std::make_unique<DiagonalOp>(weights));
    ops.push_back(std::make_unique<InpaintOp>(random_pixel_mask(12, 10, 0.3, rng)));
    ops.push_back(std::make_unique<FourierMaskOp>(uv_mask_gen(16, 4 + trial, rng)));
    ops.push_back(std::make_unique<KsOp>(16));
    ops.push_back(std::make_unique<RadonOp>(16, angles));
    ops.push_back(std::make_unique<RadonOp>(12, jittered));
    for (const auto& op : ops) {
      const GridImage x = random_like(op->domain(), rng);
      const GridImage y = random_like(op->range(), rng);
      const GridImage ax = op->apply(x);
      const double err = std::abs(inner(ax, y) - inner(x, op->adjoint(y))) / (norm(ax) * norm(y));
      adjoint_worst = std::max(adjoint_worst, err);
      per_op[op->name()] = std::max(per_op[op->name()], err);
      if (op->has_data_prox()) {
        const double alpha = uniform(rng, 0.01, 2.0);
        const GridImage q = random_like(op->range(), rng);
        const GridImage z = random_like(op->domain(), rng);
        const GridImage closed = data_solve(*op, q, z, alpha);
        const GridImage cg = data_solve(*op, q, z, alpha, true);
        prox_worst = std::max(prox_worst, norm(axpy(-1.0, cg, closed)) / norm(cg));
      }
    }
  }

  const ComplexField d = ks_multiplier(32);
  double unit_modulus = 0.0;
  for (std::size_t i = 1; i < d.data.size(); ++i) unit_modulus = std::max(unit_modulus, std::abs(std::abs(d.data[i]) - 1.0));
  double ks_round_trip = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    const GridImage kappa = random_image(32, 32, 1, rng, -1, 1);
    ks_round_trip = std::max(ks_round_trip, max_abs_diff(ks_inverse(ks_forward(kappa)), kappa));
  }

  double fft_round_trip = 0.0;
  double parseval = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    ComplexField f(8 << trial, 64 >> trial);
    for (auto& v : f.data) v = {uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const ComplexField s = fft2(f);
    const ComplexField back = ifft2(s);
    double e_space = 0.0;
    double e_freq = 0.0;
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      fft_round_trip = std::max(fft_round_trip, std::abs(back.data[i] - f.data[i]));
      e_space += std::norm(f.data[i]);
      e_freq += std::norm(s.data[i]);
    }
    parseval = std::max(parseval, std::abs(e_freq / static_cast<double>(f.data.size()) - e_space) / e_space);
  }

  Outcome out;
  out.pass = adjoint_worst < 1e-8 && prox_worst < 1e-8 && ks_round_trip < 1e-10 && unit_modulus < 1e-10 &&
             fft_round_trip < 1e-10 && parseval < 1e-10;
  out.detail = {{"adjoint", adjoint_worst},       {"adjoint_by_operator", per_op},
                {"prox_vs_cg", prox_worst},       {"ks_round_trip", ks_round_trip},
                {"ks_unit_modulus", unit_modulus}, {"fft_round_trip", fft_round_trip},
                {"parseval", parseval}};
  return out;
}

// ---------------------------------------------------------------------------
// 3. Shift equivariance

Outcome shift_equivariance(const Options& o) {
  Rng rng(3003);
  double worst = 0.0;
  json cases = json::array();
  const GeometryMode geometries[] = {GeometryMode::Fixed, GeometryMode::Learnable, GeometryMode::Ccpg};
  const FilterMode filters[] = {FilterMode::Fourier, FilterMode::None};
  int index = 0;
  for (GeometryMode g : geometries) {
    for (FilterMode f : filters) {
      LofiConfig c = tiny_config(32);
      c.geometry = g;
      c.filter = f;
      c.boundary = Boundary::Periodic;
      c.residual = index % 2 == 0;
      c.seed = 30 + index;
      auto fresh = LofiModel<float>::create(c);
      randomize_parameters(fresh, rng, 0.05);
      randomize_filter(fresh, rng, 0.1);
      // Round trip through a checkpoint file.
      const fs::path ckpt = o.workdir / "acceptance_shift.lofi";
      save_checkpoint(fresh, ckpt);
      const auto m = load_checkpoint<float>(ckpt);
      fs::remove(ckpt);
      const GridImage q = phantom_gen(PhantomKind::Texture, 32, rng);
      const GridImage out = infer_image(m, q, 32, 32, 4096, o.threads);
      double err = 0.0;
      for (int trial = 0; trial < 3; ++trial) {
        const int dr = uniform_int(rng, -31, 31);
        const int dc = uniform_int(rng, -31, 31);
        const GridImage moved = infer_image(m, shift_image(q, dr, dc, Boundary::Periodic), 32, 32, 4096, o.threads);
        err = std::max(err, max_abs_diff(moved, shift_image(out, dr, dc, Boundary::Periodic)));
      }
      worst = std::max(worst, err);
      cases.push_back({{"geometry", to_string(g)}, {"filter", to_string(f)}, {"max_abs", err}});
      ++index;
    }
  }
  Outcome res;
  res.pass = worst < 1e-5;
  res.detail = {{"max_abs", worst}, {"cases", cases}};
  return res;
}

// ---------------------------------------------------------------------------
// 4. Identity filter

Outcome identity_filter(const Options&) {
  Rng rng(4004);
  double worst = 0.0;
  for (int size : {8, 16, 32, 64}) {
    for (int channels = 1; channels <= 3; ++channels) {
      for (int count : {1, channels}) {
        const GridImage q = random_image(size, size, channels, rng, -1, 2);
        const GridImage out = fourier_apply(q, FourierFilter<double>::identity(size, count));
        for (int r = 0; r < size; ++r) {
          for (int col = 0; col < size; ++col) {
            for (int ch = 0; ch < channels; ++ch) {
              const double v = q.at(r, col, ch);
              worst = std::max({worst, std::abs(out.at(r, col, 3 * ch) - v),
                                std::abs(out.at(r, col, 3 * ch + 1) - v), std::abs(out.at(r, col, 3 * ch + 2))});
            }
          }
        }
      }
    }
  }
  // A freshly created model preprocesses the same way.
  LofiConfig c = tiny_config(16);
  const auto m = LofiModel<float>::create(c);
  const GridImage q = random_image(16, 16, 1, rng);
  const GridImage pre = preprocess(m, q);
  for (int r = 0; r < 16; ++r) {
    for (int col = 0; col < 16; ++col) {
      worst = std::max({worst, std::abs(pre.at(r, col, 0) - q.at(r, col)), std::abs(pre.at(r, col, 1) - q.at(r, col)),
                        std::abs(pre.at(r, col, 2))});
    }
  }
  Outcome out;
  out.pass = worst < 1e-12;
  out.detail = {{"max_abs", worst}};
  return out;
}

// ---------------------------------------------------------------------------
// 5. Desk-scale denoising

Outcome desk_denoising(const Options& o) {
  Rng rng(5005);
  const auto train = denoise_pairs(9, 128, 0.15, rng);
  const auto held_out = denoise_pairs(3, 128, 0.15, rng);
  LofiConfig c = small_model(128);
  c.filter = FilterMode::None;
  c.seed = 5;
  auto m = LofiModel<float>::create(c);
  TrainConfig t = single_object_training(o, 20000, 1e-4, scaled(o, 500));
  t.seed = 55;
  const TrainSummary s = train_loop(m, std::span<const TrainPair>(train), held_out, t);
  const double noisy = observation_psnr(held_out);
  json curve = json::array();
  for (const auto& row : s.log) {
    if (row.val_psnr) curve.push_back({row.step, *row.val_psnr});
  }
  Outcome out;
  const double gain = s.final_val_psnr - noisy;
  const double drop = s.best_val_psnr - s.final_val_psnr;
  out.pass = gain >= 4.0 && drop <= 1.0;
  out.detail = {{"steps", s.steps},          {"noisy_psnr", noisy}, {"final_psnr", s.final_val_psnr},
                {"peak_psnr", s.best_val_psnr}, {"gain_db", gain},    {"peak_minus_final_db", drop},
                {"curve", curve}};
  return out;
}

// ---------------------------------------------------------------------------
// 6. Desk-scale low-dose CT

Outcome desk_ldct(const Options& o) {
  const json base{{"task", "ldct"}, {"size", 128}, {"angles", 180}, {"snr_db", 30.0}};
  json cfg = base;
  cfg["count"] = 64;
  cfg["seed"] = 6;
  const auto train = simulated(o, "ldct_train", cfg);
  cfg["count"] = 8;
  cfg["seed"] = 606;
  const auto test = simulated(o, "ldct_test", cfg);
  cfg["phantom"] = "blobs";
  cfg["seed"] = 607;
  const auto ood = simulated(o, "ldct_ood", cfg);

  LofiConfig c = small_model(128);
  c.seed = 6;
  auto m = LofiModel<float>::create(c);
  TrainConfig t = single_object_training(o, 20000, 5e-4, 0);
  t.seed = 66;
  const TrainSummary s = train_loop(m, std::span<const TrainPair>(train), {}, t);
  const double fbp_in = observation_psnr(test);
  const double fbp_ood = observation_psnr(ood);
  const double lofi_in = validation_psnr(m, std::span<const TrainPair>(test), o.threads);
  const double lofi_ood = validation_psnr(m, std::span<const TrainPair>(ood), o.threads);
  Outcome out;
  out.pass = lofi_in >= fbp_in + 3.0 && lofi_ood >= fbp_ood + 1.5;
  out.detail = {{"steps", s.steps},           {"fbp_psnr", fbp_in},  {"lofi_psnr", lofi_in},
                {"gain_db", lofi_in - fbp_in}, {"ood_fbp_psnr", fbp_ood}, {"ood_lofi_psnr", lofi_ood},
                {"ood_gain_db", lofi_ood - fbp_ood}};
  return out;
}

// ---------------------------------------------------------------------------
// 7. LoFi-ADMM resolution transfer

Outcome admm_transfer(const Options& o) {
  Rng rng(7007);
  std::vector<TrainPair> train;
  for (int i = 0; i < 32; ++i) {
    GridImage clean = phantom_gen(PhantomKind::Texture, 128, rng);
    GridImage noisy = awgn(clean, NoiseSpec::sigma(uniform(rng, 0.02, 0.12)), rng);
    train.push_back({std::move(noisy), std::move(clean)});
  }
  LofiConfig c = small_model(128);
  c.filter = FilterMode::None;
  c.geometry = GeometryMode::Learnable;
  c.seed = 7;
  auto m = LofiModel<float>::create(c);
  TrainConfig t = single_object_training(o, 8000, 5e-4, 0);
  t.seed = 77;
  const TrainSummary s = train_loop(m, std::span<const TrainPair>(train), {}, t);

  const GridImage truth = phantom_gen(PhantomKind::Texture, 256, rng);
  const InpaintOp op(random_pixel_mask(256, 256, 0.3, rng));
  const GridImage q = op.apply(truth);
  AdmmConfig cfg;
  cfg.alpha = 0.05;
  cfg.iterations = 90;
  double peak = -1e300;
  int peak_iteration = 0;
  cfg.on_iteration = [&](int k, const GridImage&, const GridImage& v) {
    const double p = psnr(v, truth);
    if (p > peak) {
      peak = p;
      peak_iteration = k;
    }
  };
  const auto denoise = [&](const GridImage& x) { return infer_image(m, x, x.height(), x.width(), 4096, o.threads); };
  const AdmmResult r = admm_run(op, q, denoise, cfg);
  const double masked = psnr(q, truth);
  const double restored = psnr(r.reconstruction, truth);
  const double ratio = r.primal_residual.front() / r.primal_residual.back();
  Outcome out;
  out.pass = restored >= masked + 5.0 && ratio >= 10.0;
  out.detail = {{"steps", s.steps},          {"masked_psnr", masked}, {"admm_psnr", restored},
                {"gain_db", restored - masked}, {"residual_first", r.primal_residual.front()},
                {"residual_last", r.primal_residual.back()}, {"residual_ratio", ratio},
                {"peak_psnr", peak},           {"peak_iteration", peak_iteration}};
  return out;
}

// ---------------------------------------------------------------------------
// 8. Resolution-agnostic training memory

Outcome training_memory(const Options& o) {
  json model = small_model(64).to_json();
  const json report = run_command("bench", {{"resolutions", {64, 256}},
                                            {"steps", 10},
                                            {"seed", 8},
                                            {"model", model},
                                            {"train", {{"object_batch", 4}, {"pixel_batch", 512}, {"pixel_steps", 1}}},
                                            {"threads", o.threads}});
  Outcome out;
  const double ratio = report.at("time_ratio").get<double>();
  out.pass = report.at("instrumented").get<bool>() && report.at("memory_invariant").get<bool>() && ratio <= 2.0;
  out.detail = report;
  return out;
}

// ---------------------------------------------------------------------------
// 9. Rotation robustness

Outcome rotation_robustness(const Options& o) {
  Rng rng(9009);
  const auto train = denoise_pairs(9, 128, 0.15, rng);
  const auto test = denoise_pairs(4, 128, 0.15, rng);
  LofiConfig c = small_model(128);
  c.seed = 9;
  auto m = LofiModel<float>::create(c);
  TrainConfig t = single_object_training(o, 2500, 5e-4, 0);
  t.seed = 99;
  train_loop(m, std::span<const TrainPair>(train), {}, t);
  std::vector<GridImage> upright;
  std::vector<GridImage> rotated;
  for (const auto& p : test) {
    upright.push_back(infer_image(m, p.observation, 128, 128, 4096, o.threads));
    const GridImage turned = infer_image(m, rotate90(p.observation, 1), 128, 128, 4096, o.threads);
    rotated.push_back(rotate90(turned, 3));
  }
  const double a = mean_psnr(upright, test);
  const double b = mean_psnr(rotated, test);
  Outcome out;
  out.pass = a - b <= 1.5;
  out.detail = {{"upright_psnr", a}, {"rotated_psnr", b}, {"degradation_db", a - b},
                {"noisy_psnr", observation_psnr(test)}};
  return out;
}

// ---------------------------------------------------------------------------
// 10. Transpose toy

Outcome transpose_toy(const Options& o) {
  Rng rng(10010);
  auto make = [&](int count) {
    std::vector<TrainPair> pairs;
    for (int i = 0; i < count; ++i) {
      GridImage img = phantom_gen(PhantomKind::Texture, 64, rng);
      GridImage t = transpose_image(img);
      pairs.push_back({std::move(img), std::move(t)});
    }
    return pairs;
  };
  const auto train = make(256);
  const auto test = make(16);
  auto fit = [&](bool inr) {
    LofiConfig c = small_model(64);
    c.branch_hidden = {64, 64};
    c.mixer_hidden = {64, 64};
    c.inr = inr;
    c.seed = 10;
    auto m = LofiModel<float>::create(c);
    TrainConfig t = single_object_training(o, 8000, 1e-3, 0);
    t.seed = 1010;
    train_loop(m, std::span<const TrainPair>(train), {}, t);
    return m;
  };
  const auto with_inr = fit(true);
  const auto without = fit(false);
  const double p_inr = validation_psnr(with_inr, std::span<const TrainPair>(test), o.threads);
  const double p_plain = validation_psnr(without, std::span<const TrainPair>(test), o.threads);

  std::vector<Coord> probes;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) probes.push_back({(j + 0.5) / 8, (i + 0.5) / 8});
  }
  const auto mapped = map_coordinates(with_inr, probes);
  double worst_px = 0.0;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const double dx = (mapped[k].x - probes[k].y) * 64;
    const double dy = (mapped[k].y - probes[k].x) * 64;
    worst_px = std::max(worst_px, std::hypot(dx, dy));
  }
  Outcome out;
  out.pass = p_inr >= p_plain + 10.0 && worst_px <= 2.0;
  out.detail = {{"inr_psnr", p_inr}, {"plain_psnr", p_plain}, {"gain_db", p_inr - p_plain},
                {"probe_max_error_px", worst_px}, {"probes", probes.size()}};
  return out;
}

// ---------------------------------------------------------------------------
// 11. Weak-lensing pipeline

Outcome lensing_pipeline(const Options& o) {
  json cfg{{"task", "ks"}, {"size", 128}, {"kappa_std", 0.05}, {"count", 64}, {"seed", 11}};
  const auto train = simulated(o, "ks_train", cfg);
  cfg["count"] = 8;
  cfg["seed"] = 1111;
  const auto test = simulated(o, "ks_test", cfg);
  LofiConfig c = small_model(128);
  c.input_scale = 0.05;
  c.output_scale = 0.05;
  c.seed = 11;
  auto m = LofiModel<float>::create(c);
  TrainConfig t = single_object_training(o, 10000, 5e-4, 0);
  t.seed = 111;
  const TrainSummary s = train_loop(m, std::span<const TrainPair>(train), {}, t);
  const double naive = observation_psnr(test);
  const double restored = validation_psnr(m, std::span<const TrainPair>(test), o.threads);
  Outcome out;
  out.pass = restored >= naive + 2.0;
  out.detail = {{"steps", s.steps},
                {"noise_sigma", ks_noise_sigma(0.37, 300.0, 128, 30.0)},
                {"ks_psnr", naive},
                {"lofi_psnr", restored},
                {"gain_db", restored - naive}};
  return out;
}

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<Outcome(const Options&)> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "gradient integrity", 60, gradient_integrity},
      {2, "operator algebra", 60, operator_algebra},
      {3, "shift equivariance", 60, shift_equivariance},
      {4, "identity filter exactness", 10, identity_filter},
      {5, "desk-scale denoising", 7200, desk_denoising},
      {6, "desk-scale low-dose CT", 7200, desk_ldct},
      {7, "ADMM resolution transfer", 1800, admm_transfer},
      {8, "resolution-agnostic training memory", 600, training_memory},
      {9, "rotation robustness", 300, rotation_robustness},
      {10, "transpose toy", 3600, transpose_toy},
      {11, "weak-lensing pipeline", 3600, lensing_pipeline},
  };
  return all;
}

bool run_one(const Criterion& c, const Options& o) {
  const auto start = Clock::now();
  Outcome out;
  std::string error;
  try {
    out = c.run(o);
  } catch (const std::exception& e) {
    error = e.what();
  }
  const double elapsed = seconds_since(start);
  // Wall-clock budgets only bind on full-length runs.
  const bool in_budget = o.scale != 1.0 || elapsed <= c.budget_seconds;
  const bool pass = error.empty() && out.pass && in_budget;
  json record = out.detail;
  record["criterion"] = c.id;
  record["title"] = c.title;
  record["pass"] = pass;
  record["seconds"] = elapsed;
  record["budget_seconds"] = c.budget_seconds;
  record["scale"] = o.scale;
  if (!error.empty()) record["error"] = error;
  std::ofstream(o.workdir / ("acceptance_" + std::to_string(c.id) + ".json")) << record.dump(2) << '\n';
  json brief = out.detail;
  brief.erase("curve");
  brief.erase("cases");
  brief.erase("rows");
  brief.erase("adjoint_by_operator");
  std::printf("criterion %d %s: %s | %.1fs | %s\n", c.id, pass ? "PASS" : "FAIL", c.title, elapsed,
              error.empty() ? brief.dump().c_str() : ("error: " + error).c_str());
  std::fflush(stdout);
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoFi acceptance runs"};
  std::vector<int> selected;
  Options o;
  o.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--criterion", selected, "criteria to run (default: all)")->check(CLI::Range(1, 11));
  app.add_option("--scale", o.scale, "training length multiplier for smoke runs")->check(CLI::PositiveNumber);
  app.add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--workdir", o.workdir, "directory for records and scratch data");
  CLI11_PARSE(app, argc, argv);
  bool all_pass = true;
  for (const auto& c : criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    all_pass = run_one(c, o) && all_pass;
  }
  return all_pass ? 0 : 1;
}

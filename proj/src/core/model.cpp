#include "lofi/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include "lofi/error.hpp"
#include "lofi/fft.hpp"
#include "lofi/memprobe.hpp"
#include "lofi/metrics.hpp"
#include "lofi/parallel.hpp"
#include "lofi/tensor_io.hpp"
#include "json_util.hpp"

namespace lofi {

using nlohmann::json;

namespace {

template <class E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<GeometryMode> kGeometryNames[] = {
    {GeometryMode::Fixed, "fixed"}, {GeometryMode::Learnable, "learnable"}, {GeometryMode::Ccpg, "ccpg"}};
constexpr EnumName<FilterMode> kFilterNames[] = {
    {FilterMode::None, "none"}, {FilterMode::Fourier, "fourier"}, {FilterMode::Spatial, "spatial"}};
constexpr EnumName<Boundary> kBoundaryNames[] = {{Boundary::Clamp, "clamp"},
                                                 {Boundary::Periodic, "periodic"}};
constexpr EnumName<Precision> kPrecisionNames[] = {{Precision::F32, "float32"},
                                                   {Precision::F64, "float64"}};

template <class E, std::size_t N>
const char* enum_name(const EnumName<E> (&table)[N], E value) {
  for (const auto& e : table) {
    if (e.value == value) return e.name;
  }
  return "?";
}

template <class E, std::size_t N>
E enum_parse(const EnumName<E> (&table)[N], const std::string& text, const char* key) {
  for (const auto& e : table) {
    if (text == e.name) return e.value;
  }
  std::string allowed;
  for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : "|") + e.name;
  throw Error(ErrorCode::Config, std::string(key) + ": '" + text + "' is not one of " + allowed);
}

using detail::read_key;
using detail::reject_unknown;

template <class E, std::size_t N>
void read_enum(const json& j, const char* key, const EnumName<E> (&table)[N], E& out) {
  std::string text;
  if (!j.contains(key)) return;
  read_key(j, key, text);
  out = enum_parse(table, text, key);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::Config, what);
}

void require_widths(const std::vector<int>& widths, const char* what) {
  for (int w : widths) require(w > 0, std::string(what) + " widths must be positive");
}

}  // namespace

const char* to_string(GeometryMode mode) { return enum_name(kGeometryNames, mode); }
const char* to_string(FilterMode mode) { return enum_name(kFilterNames, mode); }

double LofiConfig::resolved_spacing() const {
  return spacing > 0.0 ? spacing : 1.0 / input_size;
}

double LofiConfig::resolved_rho_max() const {
  return rho_max > 0.0 ? rho_max : rings * resolved_spacing();
}

int LofiConfig::preprocessed_channels() const {
  switch (filter) {
    case FilterMode::Fourier:
      return channels * (filter_real_imag ? 3 : 2);
    case FilterMode::Spatial:
      return channels * (spatial_count + 1);
    case FilterMode::None:
      break;
  }
  return channels;
}

void LofiConfig::validate() const {
  require(channels >= 1, "channels must be >= 1");
  require(input_size >= 1, "input_size must be >= 1");
  require(rings >= 1 && points_per_ring >= 1, "rings and points_per_ring must be >= 1");
  require(spacing >= 0.0 && std::isfinite(spacing), "spacing must be >= 0");
  require(rho_max >= 0.0 && std::isfinite(rho_max), "rho_max must be >= 0");
  require(ccpg_stages >= 0, "ccpg_stages must be >= 0");
  require(branch_count >= 1, "branch_count must be >= 1");
  require(patch_count() % branch_count == 0,
          "patch size K = " + std::to_string(patch_count()) + " is not divisible by branch_count " +
              std::to_string(branch_count));
  require(branch_out >= 1, "branch_out must be >= 1");
  require_widths(branch_hidden, "branch_hidden");
  require_widths(mixer_hidden, "mixer_hidden");
  require_widths(ccpg_hidden, "ccpg_hidden");
  require_widths(inr_hidden, "inr_hidden");
  require(inr_frequencies >= 0, "inr_frequencies must be >= 0");
  if (filter == FilterMode::Fourier) require_power_of_two(input_size, input_size, "Fourier filter");
  if (filter == FilterMode::Spatial) {
    require(spatial_size >= 1 && spatial_size % 2 == 1, "spatial_size must be odd");
    require(spatial_count >= 1, "spatial_count must be >= 1");
  }
  require(std::isfinite(input_shift) && std::isfinite(output_shift), "shifts must be finite");
  require(std::isfinite(input_scale) && input_scale != 0.0, "input_scale must be nonzero");
  require(std::isfinite(output_scale) && output_scale != 0.0, "output_scale must be nonzero");
}

json LofiConfig::to_json() const {
  return json{{"channels", channels},
              {"input_size", input_size},
              {"rings", rings},
              {"points_per_ring", points_per_ring},
              {"spacing", spacing},
              {"geometry", enum_name(kGeometryNames, geometry)},
              {"ccpg_stages", ccpg_stages},
              {"rho_max", rho_max},
              {"ccpg_hidden", ccpg_hidden},
              {"branch_count", branch_count},
              {"branch_hidden", branch_hidden},
              {"branch_out", branch_out},
              {"mixer_hidden", mixer_hidden},
              {"filter", enum_name(kFilterNames, filter)},
              {"filter_per_channel", filter_per_channel},
              {"filter_real_imag", filter_real_imag},
              {"spatial_size", spatial_size},
              {"spatial_count", spatial_count},
              {"inr", inr},
              {"inr_hidden", inr_hidden},
              {"inr_frequencies", inr_frequencies},
              {"residual", residual},
              {"boundary", enum_name(kBoundaryNames, boundary)},
              {"precision", enum_name(kPrecisionNames, precision)},
              {"input_shift", input_shift},
              {"input_scale", input_scale},
              {"output_shift", output_shift},
              {"output_scale", output_scale},
              {"seed", seed}};
}

LofiConfig LofiConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"channels", "input_size", "rings", "points_per_ring", "spacing", "geometry",
                  "ccpg_stages", "rho_max", "ccpg_hidden", "branch_count", "branch_hidden",
                  "branch_out", "mixer_hidden", "filter", "filter_per_channel",
                  "filter_real_imag", "spatial_size", "spatial_count", "inr", "inr_hidden",
                  "inr_frequencies", "residual", "boundary", "precision", "input_shift",
                  "input_scale", "output_shift", "output_scale", "seed"},
                 "model config");
  LofiConfig c;
  read_key(j, "channels", c.channels);
  read_key(j, "input_size", c.input_size);
  read_key(j, "rings", c.rings);
  read_key(j, "points_per_ring", c.points_per_ring);
  read_key(j, "spacing", c.spacing);
  read_enum(j, "geometry", kGeometryNames, c.geometry);
  read_key(j, "ccpg_stages", c.ccpg_stages);
  read_key(j, "rho_max", c.rho_max);
  read_key(j, "ccpg_hidden", c.ccpg_hidden);
  read_key(j, "branch_count", c.branch_count);
  read_key(j, "branch_hidden", c.branch_hidden);
  read_key(j, "branch_out", c.branch_out);
  read_key(j, "mixer_hidden", c.mixer_hidden);
  read_enum(j, "filter", kFilterNames, c.filter);
  read_key(j, "filter_per_channel", c.filter_per_channel);
  read_key(j, "filter_real_imag", c.filter_real_imag);
  read_key(j, "spatial_size", c.spatial_size);
  read_key(j, "spatial_count", c.spatial_count);
  read_key(j, "inr", c.inr);
  read_key(j, "inr_hidden", c.inr_hidden);
  read_key(j, "inr_frequencies", c.inr_frequencies);
  read_key(j, "residual", c.residual);
  read_enum(j, "boundary", kBoundaryNames, c.boundary);
  read_enum(j, "precision", kPrecisionNames, c.precision);
  read_key(j, "input_shift", c.input_shift);
  read_key(j, "input_scale", c.input_scale);
  read_key(j, "output_shift", c.output_shift);
  read_key(j, "output_scale", c.output_scale);
  read_key(j, "seed", c.seed);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(object_batch >= 1 && pixel_batch >= 1 && pixel_steps >= 1,
          "batch sizes and pixel_steps must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(max_steps >= 0, "max_steps must be >= 0");
  require(val_every >= 0, "val_every must be >= 0");
  require(threads >= 1, "threads must be >= 1");
  require(loss == "l1", "only the l1 loss is supported");
}

json TrainConfig::to_json() const {
  return json{{"lr", lr},           {"object_batch", object_batch}, {"pixel_batch", pixel_batch},
              {"pixel_steps", pixel_steps}, {"epochs", epochs},     {"max_steps", max_steps},
              {"val_every", val_every},     {"threads", threads},   {"seed", seed},
              {"loss", loss}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"lr", "object_batch", "pixel_batch", "pixel_steps", "epochs", "max_steps",
                  "val_every", "threads", "seed", "loss"},
                 "train config");
  TrainConfig t;
  read_key(j, "lr", t.lr);
  read_key(j, "object_batch", t.object_batch);
  read_key(j, "pixel_batch", t.pixel_batch);
  read_key(j, "pixel_steps", t.pixel_steps);
  read_key(j, "epochs", t.epochs);
  read_key(j, "max_steps", t.max_steps);
  read_key(j, "val_every", t.val_every);
  read_key(j, "threads", t.threads);
  read_key(j, "seed", t.seed);
  read_key(j, "loss", t.loss);
  t.validate();
  return t;
}

template <class T>
LofiParams<T> LofiParams<T>::zeros_like() const {
  LofiParams p;
  {
    // Filter gradients are image-sized.
    ExclusionScope scope;
    p.fourier = fourier.zeros_like();
    p.spatial = spatial.zeros_like();
  }
  p.offsets = Matrix<T>::Zero(offsets.rows(), offsets.cols());
  p.ccpg = ccpg.zeros_like();
  p.core = core.zeros_like();
  if (!inr.layers.empty()) p.inr = inr.zeros_like();
  return p;
}

template <class T>
void LofiParams<T>::collect(std::vector<TensorRef<T>>& out) {
  if (fourier.size > 0) fourier.collect("filter", out);
  if (spatial.count > 0) spatial.collect("filter", out);
  out.push_back({"geometry.offsets", offsets.data(), {static_cast<int>(offsets.cols() / 2), 2}});
  ccpg.collect("ccpg", out);
  core.collect("core", out);
  if (!inr.layers.empty()) inr.collect("inr", out);
}

template <class T>
void LofiParams<T>::set_zero() {
  std::vector<TensorRef<T>> refs;
  collect(refs);
  for (auto& r : refs) std::fill(r.data, r.data + r.size(), T(0));
}

template <class T>
std::size_t LofiParams<T>::parameter_count() {
  std::vector<TensorRef<T>> refs;
  collect(refs);
  std::size_t n = 0;
  for (const auto& r : refs) n += r.size();
  return n;
}

template <class T>
LofiModel<T> LofiModel<T>::create(const LofiConfig& config) {
  config.validate();
  if ((config.precision == Precision::F32) != std::is_same_v<T, float>) {
    throw Error(ErrorCode::Config, "model precision does not match the requested scalar type");
  }
  LofiModel m;
  m.config = config;
  Rng rng(config.seed);
  if (config.filter == FilterMode::Fourier) {
    m.params.fourier = FourierFilter<T>::identity(
        config.input_size, config.filter_per_channel ? config.channels : 1, config.filter_real_imag);
  } else if (config.filter == FilterMode::Spatial) {
    m.params.spatial = SpatialFilter<T>::delta(config.spatial_size, config.spatial_count);
  }
  const PatchOffsets base =
      init_circular(config.rings, config.points_per_ring, config.resolved_spacing());
  m.params.offsets = offsets_row(base).template cast<T>();
  const int patch_width = config.patch_count() * config.preprocessed_channels();
  if (config.geometry == GeometryMode::Ccpg) {
    m.params.ccpg = CcpgStack<T>::create(config.ccpg_stages, patch_width, config.patch_count(),
                                         config.ccpg_hidden, config.resolved_rho_max(), rng);
  }
  m.params.core = MultiMlpParams<T>::he_normal(patch_width, config.branch_count,
                                               config.branch_hidden, config.branch_out,
                                               config.mixer_hidden, config.channels, rng);
  if (config.inr) {
    std::vector<int> dims{config.inr_feature_count()};
    dims.insert(dims.end(), config.inr_hidden.begin(), config.inr_hidden.end());
    dims.push_back(2);
    m.params.inr = MlpParams<T>::he_normal(dims, rng, true);
  }
  m.adam.init(m.parameters());
  return m;
}

template <class T>
std::vector<TensorRef<T>> LofiModel<T>::parameters() {
  std::vector<TensorRef<T>> refs;
  params.collect(refs);
  return refs;
}

template <class T>
PatchOffsets LofiModel<T>::base_offsets() const {
  PatchOffsets p;
  p.rings = config.rings;
  p.points_per_ring = config.points_per_ring;
  p.spacing = config.resolved_spacing();
  p.learnable = config.geometry == GeometryMode::Learnable;
  p.offsets.assign(params.offsets.data(), params.offsets.data() + params.offsets.size());
  return p;
}

GridImage normalize_input(const LofiConfig& config, const GridImage& q) {
  if (q.channels() != config.channels) {
    throw Error(ErrorCode::Shape, "observation has " + std::to_string(q.channels()) +
                                      " channels, model expects " +
                                      std::to_string(config.channels));
  }
  if (!q.all_finite()) throw Error(ErrorCode::InvalidInput, "observation contains NaN/Inf");
  GridImage out = q;
  if (config.input_shift != 0.0 || config.input_scale != 1.0) {
    for (auto& v : out.data()) v = (v - config.input_shift) / config.input_scale;
  }
  return out;
}

namespace {

template <class T>
GridImage apply_filter(const LofiModel<T>& model, const GridImage& normalized) {
  switch (model.config.filter) {
    case FilterMode::Fourier:
      return fourier_apply(normalized, model.params.fourier);
    case FilterMode::Spatial:
      return spatial_apply(normalized, model.params.spatial);
    case FilterMode::None:
      break;
  }
  return normalized;
}

}  // namespace

template <class T>
GridImage preprocess(const LofiModel<T>& model, const GridImage& q) {
  return apply_filter(model, normalize_input(model.config, q));
}

template <class T>
void preprocess_backward(const LofiModel<T>& model, const GridImage& normalized,
                         const GridImage& pre_grad, LofiParams<T>& grads) {
  switch (model.config.filter) {
    case FilterMode::Fourier:
      fourier_backward(normalized, model.params.fourier, pre_grad, grads.fourier);
      break;
    case FilterMode::Spatial:
      spatial_backward(normalized, model.params.spatial, pre_grad, grads.spatial);
      break;
    case FilterMode::None:
      break;
  }
}

template <class T>
Matrix<T> inr_features(std::span<const Coord> coords, int frequencies) {
  Matrix<T> f(static_cast<Eigen::Index>(coords.size()), 2 + 4 * frequencies);
  for (std::size_t b = 0; b < coords.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    const double x = coords[b].x;
    const double y = coords[b].y;
    f(row, 0) = static_cast<T>(x);
    f(row, 1) = static_cast<T>(y);
    for (int j = 0; j < frequencies; ++j) {
      const double w = std::ldexp(std::numbers::pi, j);
      f(row, 2 + 4 * j) = static_cast<T>(std::sin(w * x));
      f(row, 3 + 4 * j) = static_cast<T>(std::cos(w * x));
      f(row, 4 + 4 * j) = static_cast<T>(std::sin(w * y));
      f(row, 5 + 4 * j) = static_cast<T>(std::cos(w * y));
    }
  }
  return f;
}

namespace {

template <class T>
std::vector<Coord> map_coordinates_cached(const LofiModel<T>& model, std::span<const Coord> coords,
                                          ForwardCache<T>* cache) {
  std::vector<Coord> centers(coords.begin(), coords.end());
  if (!model.config.inr) return centers;
  Matrix<T> feats = inr_features<T>(coords, model.config.inr_frequencies);
  const Matrix<T> head = mlp_forward(model.params.inr, feats, cache ? &cache->inr : nullptr);
  for (std::size_t b = 0; b < centers.size(); ++b) {
    centers[b].x += static_cast<double>(head(static_cast<Eigen::Index>(b), 0));
    centers[b].y += static_cast<double>(head(static_cast<Eigen::Index>(b), 1));
  }
  if (cache) cache->inr_features = std::move(feats);
  return centers;
}

template <class T>
int filter_stride(const LofiConfig& config) {
  return config.preprocessed_channels() / config.channels;
}

}  // namespace

template <class T>
std::vector<Coord> map_coordinates(const LofiModel<T>& model, std::span<const Coord> coords) {
  return map_coordinates_cached<T>(model, coords, nullptr);
}

template <class T>
Matrix<T> lofi_forward(const LofiModel<T>& model, const GridImage& pre,
                       std::span<const Coord> coords, ForwardCache<T>* cache) {
  const LofiConfig& cfg = model.config;
  if (pre.channels() != cfg.preprocessed_channels()) {
    throw Error(ErrorCode::Shape, "preprocessed observation has the wrong channel count");
  }
  std::vector<Coord> centers = map_coordinates_cached(model, coords, cache);
  Matrix<T> patch;
  if (cfg.geometry == GeometryMode::Ccpg) {
    patch = ccpg_refine(pre, centers, model.base_offsets(), model.params.ccpg, cfg.boundary,
                        cache ? &cache->ccpg : nullptr);
  } else {
    patch = extract_patches<T>(pre, centers, model.params.offsets.template cast<double>(),
                               cfg.boundary);
  }
  Matrix<T> y = multimlp_forward(model.params.core, patch, cache ? &cache->core : nullptr);
  if (cfg.residual) {
    const int stride = filter_stride<T>(cfg);
    std::vector<double> values(static_cast<std::size_t>(pre.channels()));
    for (std::size_t b = 0; b < centers.size(); ++b) {
      bicubic_sample(pre, centers[b], cfg.boundary, values);
      for (int c = 0; c < cfg.channels; ++c) {
        y(static_cast<Eigen::Index>(b), c) += static_cast<T>(values[c * stride]);
      }
    }
  }
  if (cache) {
    cache->centers = std::move(centers);
    cache->patch = std::move(patch);
  }
  return y;
}

template <class T>
void lofi_backward(const LofiModel<T>& model, const GridImage& pre,
                   const ForwardCache<T>& cache, const Matrix<T>& upstream,
                   LofiParams<T>& grads, GridImage* pre_grad) {
  const LofiConfig& cfg = model.config;
  const std::span<const Coord> centers(cache.centers);
  Matrix<T> dpatch;
  multimlp_backward(model.params.core, cache.core, upstream, grads.core, &dpatch);
  std::vector<double> gcenters;
  if (cfg.inr) gcenters.assign(2 * centers.size(), 0.0);
  std::vector<double>* gc = cfg.inr ? &gcenters : nullptr;
  if (cfg.geometry == GeometryMode::Ccpg) {
    ccpg_backward(pre, centers, model.base_offsets(), model.params.ccpg, cfg.boundary,
                  cache.ccpg, dpatch, grads.ccpg, nullptr, gc, pre_grad);
  } else {
    const Matrix<double> offsets = model.params.offsets.template cast<double>();
    Matrix<double> goff;
    const bool learn = cfg.geometry == GeometryMode::Learnable;
    if (learn) goff = Matrix<double>::Zero(1, offsets.cols());
    extract_patches_backward(pre, centers, offsets, cfg.boundary, dpatch, learn ? &goff : nullptr,
                             gc, pre_grad);
    if (learn) grads.offsets += goff.template cast<T>();
  }
  if (cfg.residual && (gc || pre_grad)) {
    const int stride = filter_stride<T>(cfg);
    std::vector<double> up(static_cast<std::size_t>(pre.channels()), 0.0);
    for (std::size_t b = 0; b < centers.size(); ++b) {
      for (int c = 0; c < cfg.channels; ++c) {
        up[c * stride] = static_cast<double>(upstream(static_cast<Eigen::Index>(b), c));
      }
      double gx = 0.0;
      double gy = 0.0;
      bicubic_sample_backward(pre, centers[b], cfg.boundary, up, gx, gy, pre_grad);
      if (gc) {
        gcenters[2 * b] += gx;
        gcenters[2 * b + 1] += gy;
      }
    }
  }
  if (cfg.inr) {
    Matrix<T> ghead(static_cast<Eigen::Index>(centers.size()), 2);
    for (std::size_t b = 0; b < centers.size(); ++b) {
      ghead(static_cast<Eigen::Index>(b), 0) = static_cast<T>(gcenters[2 * b]);
      ghead(static_cast<Eigen::Index>(b), 1) = static_cast<T>(gcenters[2 * b + 1]);
    }
    mlp_backward<T>(model.params.inr, cache.inr, ghead, grads.inr, nullptr);
  }
}

void sample_without_replacement(int count, int total, Rng& rng, std::vector<int>& out) {
  out.clear();
  if (count >= total) {
    out.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) out.push_back(i);
    return;
  }
  out.reserve(static_cast<std::size_t>(count));
  std::uniform_int_distribution<int> dist(0, total - 1);
  while (static_cast<int>(out.size()) < count) {
    const int v = dist(rng);
    const auto it = std::lower_bound(out.begin(), out.end(), v);
    if (it != out.end() && *it == v) continue;
    out.insert(it, v);
  }
}

namespace {

template <class T>
void add_into(LofiParams<T>& dst, LofiParams<T>& src) {
  std::vector<TensorRef<T>> a;
  std::vector<TensorRef<T>> b;
  dst.collect(a);
  src.collect(b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].size(); ++k) a[i].data[k] += b[i].data[k];
  }
}

}  // namespace

template <class T>
double batch_gradients(const LofiModel<T>& model, std::span<const TrainPair* const> batch,
                       Rng& rng, int pixel_batch, int threads, LofiParams<T>& grads) {
  const LofiConfig& cfg = model.config;
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw Error(ErrorCode::InvalidInput, "empty object batch");
  // Pixel draws happen up front so the sample does not depend on threads.
  std::vector<std::vector<int>> picks(static_cast<std::size_t>(n));
  for (int o = 0; o < n; ++o) {
    const GridImage& f = batch[o]->target;
    if (f.channels() != cfg.channels) {
      throw Error(ErrorCode::Shape, "target channel count does not match the model");
    }
    sample_without_replacement(pixel_batch, f.height() * f.width(), rng, picks[o]);
  }
  const int workers = std::clamp(threads, 1, n);
  std::vector<LofiParams<T>> local;
  for (int w = 1; w < workers; ++w) local.push_back(grads.zeros_like());
  std::vector<double> losses(static_cast<std::size_t>(n), 0.0);
  const bool filtered = cfg.filter != FilterMode::None;
  const T object_weight = static_cast<T>(1.0 / n);

  parallel_for(n, workers, [&](int o, int w) {
    LofiParams<T>& g = w == 0 ? grads : local[w - 1];
    const TrainPair& pair = *batch[o];
    GridImage normalized;
    GridImage pre;
    {
      ExclusionScope scope;
      normalized = normalize_input(cfg, pair.observation);
      pre = apply_filter(model, normalized);
    }
    const GridImage& f = pair.target;
    const auto& idx = picks[o];
    std::vector<Coord> coords(idx.size());
    Matrix<T> target(static_cast<Eigen::Index>(idx.size()), cfg.channels);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const int r = idx[i] / f.width();
      const int c = idx[i] % f.width();
      coords[i] = pixel_center(r, c, f.height(), f.width());
      for (int ch = 0; ch < cfg.channels; ++ch) {
        target(static_cast<Eigen::Index>(i), ch) =
            static_cast<T>((f.at(r, c, ch) - cfg.output_shift) / cfg.output_scale);
      }
    }
    ForwardCache<T> cache;
    const Matrix<T> pred = lofi_forward(model, pre, coords, &cache);
    L1Result<T> l1 = l1_loss(pred, target);
    losses[o] = l1.loss;
    l1.grad *= object_weight;
    GridImage pre_grad;
    if (filtered) {
      ExclusionScope scope;
      pre_grad = GridImage(pre.shape());
    }
    lofi_backward(model, pre, cache, l1.grad, g, filtered ? &pre_grad : nullptr);
    if (filtered) {
      ExclusionScope scope;
      preprocess_backward(model, normalized, pre_grad, g);
      // Release the image-sized buffers inside the scope.
      pre_grad = GridImage();
      pre = GridImage();
      normalized = GridImage();
    }
  });
  for (auto& l : local) add_into(grads, l);
  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= n;
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::Numeric, "non-finite training loss at step " + std::to_string(model.step));
  }
  return loss;
}

template <class T>
double train_step(LofiModel<T>& model, std::span<const TrainPair* const> batch, Rng& rng,
                  const TrainConfig& train) {
  LofiParams<T> grads = model.params.zeros_like();
  std::vector<TensorRef<T>> params = model.parameters();
  std::vector<TensorRef<T>> grad_refs;
  grads.collect(grad_refs);
  if (model.adam.m.size() != params.size()) model.adam.init(params);
  double loss = 0.0;
  for (int rep = 0; rep < train.pixel_steps; ++rep) {
    grads.set_zero();
    loss = batch_gradients(model, batch, rng, train.pixel_batch, train.threads, grads);
    adam_step<T>(params, grad_refs, model.adam, train.lr);
  }
  ++model.step;
  return loss;
}

double auto_peak(const GridImage& ref) {
  const auto [lo, hi] = std::minmax_element(ref.data().begin(), ref.data().end());
  if (*lo >= 0.0 && *hi <= 1.0) return 1.0;
  return *hi > *lo ? *hi - *lo : 1.0;
}

template <class T>
double validation_psnr(const LofiModel<T>& model, std::span<const TrainPair> pairs, int threads) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) {
    const GridImage out =
        infer_image(model, p.observation, p.target.height(), p.target.width(), 4096, threads);
    sum += psnr(out, p.target, auto_peak(p.target));
  }
  return sum / static_cast<double>(pairs.size());
}

template <class T>
TrainSummary train_loop(LofiModel<T>& model, std::span<const TrainPair> data,
                        std::span<const TrainPair> validation, const TrainConfig& train,
                        const TrainCallbacks& callbacks) {
  train.validate();
  TrainSummary summary;
  if (train.epochs == 0) return summary;
  if (data.empty()) throw Error(ErrorCode::InvalidInput, "training set is empty");
  // Seeding by step lets a resumed run draw fresh batches.
  Rng rng(train.seed + static_cast<std::uint64_t>(model.step));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const TrainPair*> batch;
  bool have_val = false;
  bool done = false;
  for (int epoch = 0; epoch < train.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size() && !done;
         start += static_cast<std::size_t>(train.object_batch)) {
      batch.clear();
      const std::size_t stop = std::min(order.size(), start + train.object_batch);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[order[i]]);
      TrainLogRow row;
      row.loss = train_step(model, batch, rng, train);
      row.step = model.step;
      ++summary.steps;
      if (!validation.empty() && train.val_every > 0 && model.step % train.val_every == 0) {
        row.val_psnr = validation_psnr(model, validation, train.threads);
        summary.final_val_psnr = *row.val_psnr;
        summary.best_val_psnr = have_val ? std::max(summary.best_val_psnr, *row.val_psnr)
                                         : *row.val_psnr;
        have_val = true;
      }
      summary.log.push_back(row);
      if (callbacks.on_log) callbacks.on_log(row);
      if (train.max_steps > 0 && summary.steps >= train.max_steps) done = true;
    }
    if (callbacks.on_epoch) callbacks.on_epoch(model.step);
  }
  if (!validation.empty() && (summary.log.empty() || !summary.log.back().val_psnr)) {
    summary.final_val_psnr = validation_psnr(model, validation, train.threads);
    summary.best_val_psnr = have_val ? std::max(summary.best_val_psnr, summary.final_val_psnr)
                                     : summary.final_val_psnr;
  }
  return summary;
}

template <class T>
GridImage infer_preprocessed(const LofiModel<T>& model, const GridImage& pre, int out_height,
                             int out_width, int pixel_batch, int threads) {
  if (out_height < 1 || out_width < 1) {
    throw Error(ErrorCode::InvalidInput, "output resolution must be positive");
  }
  const LofiConfig& cfg = model.config;
  const long total = static_cast<long>(out_height) * out_width;
  const long tiles = (total + kInferTile - 1) / kInferTile;
  const long tiles_per_chunk = std::max(1, (std::max(1, pixel_batch) + kInferTile - 1) / kInferTile);
  const long chunks = (tiles + tiles_per_chunk - 1) / tiles_per_chunk;
  GridImage out(out_height, out_width, cfg.channels);
  parallel_for(static_cast<int>(chunks), threads, [&](int chunk, int) {
    std::vector<Coord> coords(kInferTile);
    const long first = chunk * tiles_per_chunk;
    const long last = std::min(tiles, first + tiles_per_chunk);
    for (long tile = first; tile < last; ++tile) {
      const long begin = tile * kInferTile;
      const long count = std::min<long>(kInferTile, total - begin);
      for (long i = 0; i < kInferTile; ++i) {
        // Short tiles repeat their last pixel so every tile has the same shape.
        const long p = begin + std::min(i, count - 1);
        coords[i] = pixel_center(static_cast<int>(p / out_width), static_cast<int>(p % out_width),
                                 out_height, out_width);
      }
      const Matrix<T> y = lofi_forward(model, pre, coords);
      for (long i = 0; i < count; ++i) {
        const long p = begin + i;
        for (int c = 0; c < cfg.channels; ++c) {
          out.at(static_cast<int>(p / out_width), static_cast<int>(p % out_width), c) =
              static_cast<double>(y(i, c)) * cfg.output_scale + cfg.output_shift;
        }
      }
    }
  });
  return out;
}

template <class T>
GridImage infer_image(const LofiModel<T>& model, const GridImage& q, int out_height,
                      int out_width, int pixel_batch, int threads) {
  return infer_preprocessed(model, preprocess(model, q), out_height, out_width, pixel_batch,
                            threads);
}

template <class T>
std::vector<Matrix<double>> trace_offsets(const LofiModel<T>& model, const GridImage& q,
                                          std::span<const Coord> coords) {
  const GridImage pre = preprocess(model, q);
  const std::vector<Coord> centers = map_coordinates(model, coords);
  std::vector<Matrix<double>> trace;
  if (model.config.geometry == GeometryMode::Ccpg) {
    ccpg_refine<T>(pre, centers, model.base_offsets(), model.params.ccpg, model.config.boundary,
                   nullptr, &trace);
  } else {
    trace.push_back(model.params.offsets.template cast<double>().replicate(
        static_cast<Eigen::Index>(coords.size()), 1));
  }
  return trace;
}

namespace {

constexpr char kCheckpointMagic[4] = {'L', 'F', 'C', 'K'};

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, std::uint32_t limit) {
  const std::uint32_t n = read_u32(is);
  if (n > limit) throw Error(ErrorCode::Corrupt, "checkpoint string length out of range");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw Error(ErrorCode::Corrupt, "truncated checkpoint");
  return s;
}

json read_header(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw Error(ErrorCode::Corrupt, "not a checkpoint (bad magic)");
  }
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::Corrupt, "unsupported checkpoint version " + std::to_string(version));
  }
  try {
    return json::parse(read_string(is, 1u << 24));
  } catch (const json::exception&) {
    throw Error(ErrorCode::Corrupt, "checkpoint config block is not valid JSON");
  }
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open checkpoint " + path.string());
  return is;
}

}  // namespace

template <class T>
void save_checkpoint(LofiModel<T>& model, const std::filesystem::path& path) {
  std::vector<TensorRef<T>> params = model.parameters();
  if (model.adam.m.size() != params.size()) model.adam.init(params);
  const json header{{"config", model.config.to_json()},
                    {"step", model.step},
                    {"adam_t", model.adam.t}};
  const DType dtype = std::is_same_v<T, float> ? DType::F32 : DType::F64;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 4);
  write_u32(os, kCheckpointVersion);
  write_string(os, header.dump());
  write_u32(os, static_cast<std::uint32_t>(params.size() * 3));
  auto section = [&](const std::string& name, const T* data, const std::vector<int>& shape) {
    write_string(os, name);
    Tensor t;
    t.dtype = dtype;
    for (int d : shape) t.dims.push_back(static_cast<std::uint32_t>(d));
    t.values.assign(data, data + t.numel());
    write_tensor(os, t);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    section("param/" + params[i].name, params[i].data, params[i].shape);
    section("adam.m/" + params[i].name, model.adam.m[i].data(), params[i].shape);
    section("adam.v/" + params[i].name, model.adam.v[i].data(), params[i].shape);
  }
  if (!os) throw Error(ErrorCode::Io, "failed writing checkpoint " + path.string());
}

LofiConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream is = open_checkpoint(path);
  const json header = read_header(is);
  if (!header.contains("config")) throw Error(ErrorCode::Corrupt, "checkpoint has no config");
  return LofiConfig::from_json(header.at("config"));
}

template <class T>
LofiModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is = open_checkpoint(path);
  const json header = read_header(is);
  LofiConfig config;
  std::int64_t step = 0;
  std::int64_t adam_t = 0;
  try {
    config = LofiConfig::from_json(header.at("config"));
    step = header.at("step").get<std::int64_t>();
    adam_t = header.at("adam_t").get<std::int64_t>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::Corrupt, "checkpoint header is incomplete");
  }
  LofiModel<T> model = LofiModel<T>::create(config);
  model.step = step;
  model.adam.t = adam_t;
  std::map<std::string, Tensor> sections;
  const std::uint32_t count = read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is, 4096);
    sections.emplace(std::move(name), read_tensor(is));
  }
  std::vector<TensorRef<T>> params = model.parameters();
  auto fill = [&](const std::string& name, T* data, std::size_t n) {
    const auto it = sections.find(name);
    if (it == sections.end()) throw Error(ErrorCode::Corrupt, "checkpoint is missing " + name);
    if (it->second.numel() != n) throw Error(ErrorCode::Corrupt, "checkpoint shape mismatch for " + name);
    for (std::size_t k = 0; k < n; ++k) data[k] = static_cast<T>(it->second.values[k]);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    fill("param/" + params[i].name, params[i].data, params[i].size());
    fill("adam.m/" + params[i].name, model.adam.m[i].data(), params[i].size());
    fill("adam.v/" + params[i].name, model.adam.v[i].data(), params[i].size());
  }
  return model;
}

#define LOFI_INSTANTIATE_MODEL(T)                                                             \
  template struct LofiParams<T>;                                                              \
  template struct LofiModel<T>;                                                               \
  template GridImage preprocess(const LofiModel<T>&, const GridImage&);                       \
  template void preprocess_backward(const LofiModel<T>&, const GridImage&, const GridImage&,  \
                                    LofiParams<T>&);                                          \
  template Matrix<T> inr_features<T>(std::span<const Coord>, int);                            \
  template std::vector<Coord> map_coordinates(const LofiModel<T>&, std::span<const Coord>);   \
  template Matrix<T> lofi_forward(const LofiModel<T>&, const GridImage&,                      \
                                  std::span<const Coord>, ForwardCache<T>*);                  \
  template void lofi_backward(const LofiModel<T>&, const GridImage&, const ForwardCache<T>&,  \
                              const Matrix<T>&, LofiParams<T>&, GridImage*);                  \
  template double batch_gradients(const LofiModel<T>&, std::span<const TrainPair* const>,     \
                                  Rng&, int, int, LofiParams<T>&);                            \
  template double train_step(LofiModel<T>&, std::span<const TrainPair* const>, Rng&,          \
                             const TrainConfig&);                                             \
  template TrainSummary train_loop(LofiModel<T>&, std::span<const TrainPair>,                 \
                                   std::span<const TrainPair>, const TrainConfig&,            \
                                   const TrainCallbacks&);                                    \
  template double validation_psnr(const LofiModel<T>&, std::span<const TrainPair>, int);      \
  template GridImage infer_image(const LofiModel<T>&, const GridImage&, int, int, int, int);  \
  template GridImage infer_preprocessed(const LofiModel<T>&, const GridImage&, int, int, int, \
                                        int);                                                 \
  template std::vector<Matrix<double>> trace_offsets(const LofiModel<T>&, const GridImage&,   \
                                                     std::span<const Coord>);                 \
  template void save_checkpoint(LofiModel<T>&, const std::filesystem::path&);                 \
  template LofiModel<T> load_checkpoint<T>(const std::filesystem::path&);

LOFI_INSTANTIATE_MODEL(float)
LOFI_INSTANTIATE_MODEL(double)

}  // namespace lofi

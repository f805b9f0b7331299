#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lofi/image_grid.hpp"
#include "lofi/nn.hpp"
#include "lofi/noise_filter.hpp"
#include "lofi/patch_geometry.hpp"

namespace lofi {

enum class GeometryMode { Fixed, Learnable, Ccpg };
enum class FilterMode { None, Fourier, Spatial };
enum class Precision { F32, F64 };

struct LofiConfig {
  int channels = 1;
  int input_size = 128;  // observation side; fixes the Fourier filter size
  int rings = 9;
  int points_per_ring = 9;
  double spacing = 0.0;  // 0 means one input pixel, 1 / input_size
  GeometryMode geometry = GeometryMode::Fixed;
  int ccpg_stages = 2;
  double rho_max = 0.0;  // 0 means rings * spacing
  std::vector<int> ccpg_hidden{256, 256};
  int branch_count = 9;
  std::vector<int> branch_hidden{370, 370, 370};
  int branch_out = 100;
  std::vector<int> mixer_hidden{370, 370, 370};
  FilterMode filter = FilterMode::Fourier;
  bool filter_per_channel = false;
  bool filter_real_imag = true;
  int spatial_size = 5;
  int spatial_count = 4;
  bool inr = false;
  std::vector<int> inr_hidden{128, 128};
  int inr_frequencies = 6;
  bool residual = false;  // add the sampled input at the query point
  Boundary boundary = Boundary::Clamp;
  Precision precision = Precision::F32;
  // Observations are mapped to (q - input_shift) / input_scale before the
  // filter; outputs are y * output_scale + output_shift.
  double input_shift = 0.0;
  double input_scale = 1.0;
  double output_shift = 0.0;
  double output_scale = 1.0;
  std::uint64_t seed = 0;

  double resolved_spacing() const;
  double resolved_rho_max() const;
  int patch_count() const { return rings * points_per_ring; }
  int preprocessed_channels() const;
  int inr_feature_count() const { return 2 + 4 * inr_frequencies; }
  void validate() const;

  nlohmann::json to_json() const;
  // Rejects unknown keys; missing keys keep their defaults.
  static LofiConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  double lr = 1e-4;
  int object_batch = 64;
  int pixel_batch = 512;
  int pixel_steps = 2;  // optimizer steps per object mini-batch
  int epochs = 200;
  std::int64_t max_steps = 0;  // 0: no cap
  int val_every = 100;
  int threads = 1;
  std::uint64_t seed = 0;
  std::string loss = "l1";

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

template <class T>
struct LofiParams {
  FourierFilter<T> fourier;
  SpatialFilter<T> spatial;
  Matrix<T> offsets;  // 1 x 2K patch geometry
  CcpgStack<T> ccpg;
  MultiMlpParams<T> core;
  MlpParams<T> inr;  // present when the config enables it

  LofiParams zeros_like() const;
  void collect(std::vector<TensorRef<T>>& out);
  void set_zero();
  std::size_t parameter_count();
};

template <class T>
struct LofiModel {
  LofiConfig config;
  LofiParams<T> params;
  AdamState<T> adam;
  std::int64_t step = 0;

  // Seeded from config.seed.
  static LofiModel create(const LofiConfig& config);

  std::vector<TensorRef<T>> parameters();
  PatchOffsets base_offsets() const;
};

// Observation normalization followed by the configured filter.
template <class T>
GridImage preprocess(const LofiModel<T>& model, const GridImage& q);
GridImage normalize_input(const LofiConfig& config, const GridImage& q);

// Filter gradients from dL/d(preprocessed image); `normalized` is
// normalize_input(q).
template <class T>
void preprocess_backward(const LofiModel<T>& model, const GridImage& normalized,
                         const GridImage& pre_grad, LofiParams<T>& grads);

template <class T>
struct ForwardCache {
  std::vector<Coord> centers;  // after the coordinate network
  Matrix<T> inr_features;
  MlpCache<T> inr;
  Matrix<T> patch;
  CcpgCache<T> ccpg;
  MultiMlpCache<T> core;
};

// Sinusoidal features of the raw coordinates fed to the coordinate network.
template <class T>
Matrix<T> inr_features(std::span<const Coord> coords, int frequencies);

// Maps coordinates through the coordinate network (identity when disabled).
template <class T>
std::vector<Coord> map_coordinates(const LofiModel<T>& model, std::span<const Coord> coords);

// Network outputs [B][C] in normalized units.
template <class T>
Matrix<T> lofi_forward(const LofiModel<T>& model, const GridImage& pre,
                       std::span<const Coord> coords, ForwardCache<T>* cache = nullptr);

// Accumulates parameter gradients; dL/d(pre) goes to `pre_grad` when set.
template <class T>
void lofi_backward(const LofiModel<T>& model, const GridImage& pre,
                   const ForwardCache<T>& cache, const Matrix<T>& upstream,
                   LofiParams<T>& grads, GridImage* pre_grad);

struct TrainPair {
  GridImage observation;
  GridImage target;
};

// Samples `count` distinct indices from [0, total) (all of them when
// count >= total) into `out`, which keeps its capacity between calls.
void sample_without_replacement(int count, int total, Rng& rng, std::vector<int>& out);

// Gradients of the mean l1 loss over the sampled pixels of `batch`,
// accumulated into `grads`. Returns the loss.
template <class T>
double batch_gradients(const LofiModel<T>& model, std::span<const TrainPair* const> batch,
                       Rng& rng, int pixel_batch, int threads, LofiParams<T>& grads);

// pixel_steps rounds of: sample pixels, gradients, one Adam step. Returns
// the last round's loss.
template <class T>
double train_step(LofiModel<T>& model, std::span<const TrainPair* const> batch, Rng& rng,
                  const TrainConfig& train);

struct TrainLogRow {
  std::int64_t step = 0;
  double loss = 0.0;
  std::optional<double> val_psnr;
};

struct TrainCallbacks {
  std::function<void(const TrainLogRow&)> on_log;
  // Called after every epoch.
  std::function<void(std::int64_t step)> on_epoch;
};

struct TrainSummary {
  std::vector<TrainLogRow> log;
  std::int64_t steps = 0;
  double best_val_psnr = 0.0;
  double final_val_psnr = 0.0;
};

template <class T>
TrainSummary train_loop(LofiModel<T>& model, std::span<const TrainPair> data,
                        std::span<const TrainPair> validation, const TrainConfig& train,
                        const TrainCallbacks& callbacks = {});

// Mean PSNR of model reconstructions over `pairs` at the target resolution.
template <class T>
double validation_psnr(const LofiModel<T>& model, std::span<const TrainPair> pairs, int threads);

// Pixels are evaluated in fixed 128-pixel tiles, so the result does not
// depend on pixel_batch (rounded up to whole tiles) or on threads.
inline constexpr int kInferTile = 128;

template <class T>
GridImage infer_image(const LofiModel<T>& model, const GridImage& q, int out_height,
                      int out_width, int pixel_batch = 4096, int threads = 1);

// Same as infer_image but on an already preprocessed observation.
template <class T>
GridImage infer_preprocessed(const LofiModel<T>& model, const GridImage& pre, int out_height,
                             int out_width, int pixel_batch = 4096, int threads = 1);

// Offsets used at each query after coordinate mapping: T + 1 entries of
// [B][2K] for CCPG models, one entry otherwise.
template <class T>
std::vector<Matrix<double>> trace_offsets(const LofiModel<T>& model, const GridImage& q,
                                          std::span<const Coord> coords);

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(LofiModel<T>& model, const std::filesystem::path& path);

LofiConfig read_checkpoint_config(const std::filesystem::path& path);

template <class T>
LofiModel<T> load_checkpoint(const std::filesystem::path& path);

// PSNR peak used for validation: 1 for data in [0, 1], else the range.
double auto_peak(const GridImage& ref);

const char* to_string(GeometryMode mode);
const char* to_string(FilterMode mode);

}  // namespace lofi

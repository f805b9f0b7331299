#include "lofi/patch_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lofi/error.hpp"

namespace lofi {

double PatchOffsets::max_norm() const {
  double best = 0.0;
  for (int k = 0; k < count(); ++k) best = std::max(best, std::hypot(offsets[2 * k], offsets[2 * k + 1]));
  return best;
}

PatchOffsets init_circular(int rings, int points_per_ring, double spacing) {
  if (rings < 1 || points_per_ring < 1) {
    throw Error(ErrorCode::Config, "circular geometry needs at least one ring and one point");
  }
  if (!(spacing > 0.0)) throw Error(ErrorCode::Config, "ring spacing must be positive");
  PatchOffsets p;
  p.rings = rings;
  p.points_per_ring = points_per_ring;
  p.spacing = spacing;
  p.offsets.reserve(static_cast<std::size_t>(rings) * points_per_ring * 2);
  for (int m = 1; m <= rings; ++m) {
    const double radius = m * spacing;
    for (int j = 0; j < points_per_ring; ++j) {
      const double angle = 2.0 * std::numbers::pi * j / points_per_ring;
      p.offsets.push_back(radius * std::cos(angle));
      p.offsets.push_back(radius * std::sin(angle));
    }
  }
  return p;
}

Matrix<double> offsets_row(const PatchOffsets& offsets) {
  Matrix<double> row(1, static_cast<Eigen::Index>(offsets.offsets.size()));
  std::copy(offsets.offsets.begin(), offsets.offsets.end(), row.data());
  return row;
}

void extract_patch(const GridImage& img, Coord center, std::span<const double> offsets,
                   Boundary boundary, std::span<double> out) {
  const int channels = img.channels();
  const std::size_t k_count = offsets.size() / 2;
  if (out.size() != k_count * channels) throw Error(ErrorCode::Shape, "patch buffer size mismatch");
  for (std::size_t k = 0; k < k_count; ++k) {
    const Coord p{center.x + offsets[2 * k], center.y + offsets[2 * k + 1]};
    bicubic_sample(img, p, boundary, out.subspan(k * channels, channels));
  }
}

void extract_patch_backward(const GridImage& img, Coord center,
                            std::span<const double> offsets, Boundary boundary,
                            std::span<const double> upstream, std::span<double> grad_center,
                            std::span<double> grad_offsets, GridImage* image_grad) {
  const int channels = img.channels();
  const std::size_t k_count = offsets.size() / 2;
  for (std::size_t k = 0; k < k_count; ++k) {
    const Coord p{center.x + offsets[2 * k], center.y + offsets[2 * k + 1]};
    double gx = 0.0;
    double gy = 0.0;
    bicubic_sample_backward(img, p, boundary, upstream.subspan(k * channels, channels), gx, gy,
                            image_grad);
    if (!grad_center.empty()) {
      grad_center[0] += gx;
      grad_center[1] += gy;
    }
    if (!grad_offsets.empty()) {
      grad_offsets[2 * k] += gx;
      grad_offsets[2 * k + 1] += gy;
    }
  }
}

namespace {

void check_offsets(const Matrix<double>& offsets, std::size_t batch) {
  if (offsets.rows() != 1 && offsets.rows() != static_cast<Eigen::Index>(batch)) {
    throw Error(ErrorCode::Shape, "offset rows must be 1 or the batch size");
  }
  if (offsets.cols() % 2 != 0) throw Error(ErrorCode::Shape, "offsets must be (dx, dy) pairs");
}

}  // namespace

template <class T>
Matrix<T> extract_patches(const GridImage& img, std::span<const Coord> centers,
                          const Matrix<double>& offsets, Boundary boundary) {
  check_offsets(offsets, centers.size());
  const int channels = img.channels();
  const auto k_count = offsets.cols() / 2;
  Matrix<T> out(static_cast<Eigen::Index>(centers.size()), k_count * channels);
  std::vector<double> values(static_cast<std::size_t>(channels));
  for (std::size_t b = 0; b < centers.size(); ++b) {
    const Eigen::Index row = offsets.rows() == 1 ? 0 : static_cast<Eigen::Index>(b);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const Coord p{centers[b].x + offsets(row, 2 * k), centers[b].y + offsets(row, 2 * k + 1)};
      bicubic_sample(img, p, boundary, values);
      for (int c = 0; c < channels; ++c) {
        out(static_cast<Eigen::Index>(b), k * channels + c) = static_cast<T>(values[c]);
      }
    }
  }
  return out;
}

template <class T>
void extract_patches_backward(const GridImage& img, std::span<const Coord> centers,
                              const Matrix<double>& offsets, Boundary boundary,
                              const Matrix<T>& upstream, Matrix<double>* grad_offsets,
                              std::vector<double>* grad_centers, GridImage* image_grad) {
  check_offsets(offsets, centers.size());
  const int channels = img.channels();
  const auto k_count = offsets.cols() / 2;
  if (upstream.rows() != static_cast<Eigen::Index>(centers.size()) ||
      upstream.cols() != k_count * channels) {
    throw Error(ErrorCode::Shape, "patch upstream shape mismatch");
  }
  if (grad_offsets && (grad_offsets->rows() != offsets.rows() ||
                       grad_offsets->cols() != offsets.cols())) {
    throw Error(ErrorCode::Shape, "offset gradient shape mismatch");
  }
  if (grad_centers && grad_centers->size() != 2 * centers.size()) {
    throw Error(ErrorCode::Shape, "center gradient shape mismatch");
  }
  std::vector<double> up(static_cast<std::size_t>(channels));
  for (std::size_t b = 0; b < centers.size(); ++b) {
    const Eigen::Index row = offsets.rows() == 1 ? 0 : static_cast<Eigen::Index>(b);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      bool any = false;
      for (int c = 0; c < channels; ++c) {
        up[c] = static_cast<double>(upstream(static_cast<Eigen::Index>(b), k * channels + c));
        any = any || up[c] != 0.0;
      }
      if (!any) continue;
      const Coord p{centers[b].x + offsets(row, 2 * k), centers[b].y + offsets(row, 2 * k + 1)};
      double gx = 0.0;
      double gy = 0.0;
      bicubic_sample_backward(img, p, boundary, up, gx, gy, image_grad);
      if (grad_offsets) {
        (*grad_offsets)(row, 2 * k) += gx;
        (*grad_offsets)(row, 2 * k + 1) += gy;
      }
      if (grad_centers) {
        (*grad_centers)[2 * b] += gx;
        (*grad_centers)[2 * b + 1] += gy;
      }
    }
  }
}

template <class T>
CcpgStack<T> CcpgStack<T>::create(int stage_count, int patch_width, int offset_count,
                                  std::span<const int> hidden, double rho_max, Rng& rng) {
  if (stage_count < 0) throw Error(ErrorCode::Config, "CCPG stage count must be >= 0");
  if (!(rho_max > 0.0)) throw Error(ErrorCode::Config, "CCPG rho_max must be positive");
  CcpgStack s;
  s.rho_max = rho_max;
  std::vector<int> dims{patch_width};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(2 * offset_count);
  for (int i = 0; i < stage_count; ++i) s.stages.push_back(MlpParams<T>::he_normal(dims, rng, true));
  return s;
}

template <class T>
CcpgStack<T> CcpgStack<T>::zeros_like() const {
  CcpgStack s;
  s.rho_max = rho_max;
  for (const auto& st : stages) s.stages.push_back(st.zeros_like());
  return s;
}

template <class T>
std::size_t CcpgStack<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& st : stages) n += st.parameter_count();
  return n;
}

template <class T>
void CcpgStack<T>::collect(const std::string& prefix, std::vector<TensorRef<T>>& out) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].collect(prefix + ".stage" + std::to_string(i), out);
  }
}

template <class T>
void CcpgStack<T>::set_zero() {
  for (auto& st : stages) st.set_zero();
}

template <class T>
Matrix<T> ccpg_refine(const GridImage& img, std::span<const Coord> centers,
                      const PatchOffsets& base, const CcpgStack<T>& stack,
                      Boundary boundary, CcpgCache<T>* cache,
                      std::vector<Matrix<double>>* trace) {
  const Matrix<double> base_row = offsets_row(base);
  const auto batch = static_cast<Eigen::Index>(centers.size());
  Matrix<T> patch = extract_patches<T>(img, centers, base_row, boundary);
  if (cache) {
    cache->patches.assign(1, patch);
    cache->offsets.clear();
    cache->squashed.clear();
    cache->stage_caches.assign(stack.stages.size(), {});
  }
  if (trace) {
    trace->clear();
    trace->push_back(base_row.replicate(batch, 1));
  }
  for (std::size_t i = 0; i < stack.stages.size(); ++i) {
    MlpCache<T> local;
    MlpCache<T>& sc = cache ? cache->stage_caches[i] : local;
    const Matrix<T> raw = mlp_forward(stack.stages[i], patch, &sc);
    Matrix<T> squashed = raw.array().tanh().matrix();
    Matrix<double> delta = base_row.replicate(batch, 1);
    delta += stack.rho_max * squashed.template cast<double>();
    patch = extract_patches<T>(img, centers, delta, boundary);
    if (trace) trace->push_back(delta);
    if (cache) {
      cache->patches.push_back(patch);
      cache->offsets.push_back(std::move(delta));
      cache->squashed.push_back(std::move(squashed));
    }
  }
  return patch;
}

template <class T>
void ccpg_backward(const GridImage& img, std::span<const Coord> centers,
                   const PatchOffsets& base, const CcpgStack<T>& stack, Boundary boundary,
                   const CcpgCache<T>& cache, const Matrix<T>& upstream,
                   CcpgStack<T>& grads, Matrix<double>* grad_base,
                   std::vector<double>* grad_centers, GridImage* image_grad) {
  if (cache.offsets.size() != stack.stages.size() ||
      cache.patches.size() != stack.stages.size() + 1) {
    throw Error(ErrorCode::Shape, "CCPG cache does not match the stack");
  }
  Matrix<T> g = upstream;
  for (std::size_t i = stack.stages.size(); i-- > 0;) {
    const Matrix<double>& delta = cache.offsets[i];
    Matrix<double> g_delta = Matrix<double>::Zero(delta.rows(), delta.cols());
    extract_patches_backward(img, centers, delta, boundary, g, &g_delta, grad_centers,
                             image_grad);
    if (grad_base) *grad_base += g_delta.colwise().sum();
    const Matrix<T>& s = cache.squashed[i];
    const Matrix<T> g_raw =
        (g_delta.template cast<T>().array() * static_cast<T>(stack.rho_max) *
         (T(1) - s.array().square()))
            .matrix();
    Matrix<T> g_in;
    mlp_backward(stack.stages[i], cache.stage_caches[i], g_raw, grads.stages[i], &g_in);
    g = std::move(g_in);
  }
  extract_patches_backward(img, centers, offsets_row(base), boundary, g, grad_base,
                           grad_centers, image_grad);
}

#define LOFI_INSTANTIATE_GEOMETRY(T)                                                        \
  template struct CcpgStack<T>;                                                             \
  template Matrix<T> extract_patches(const GridImage&, std::span<const Coord>,              \
                                     const Matrix<double>&, Boundary);                      \
  template void extract_patches_backward(const GridImage&, std::span<const Coord>,          \
                                         const Matrix<double>&, Boundary, const Matrix<T>&, \
                                         Matrix<double>*, std::vector<double>*, GridImage*); \
  template Matrix<T> ccpg_refine(const GridImage&, std::span<const Coord>,                  \
                                 const PatchOffsets&, const CcpgStack<T>&, Boundary,        \
                                 CcpgCache<T>*, std::vector<Matrix<double>>*);              \
  template void ccpg_backward(const GridImage&, std::span<const Coord>, const PatchOffsets&, \
                              const CcpgStack<T>&, Boundary, const CcpgCache<T>&,           \
                              const Matrix<T>&, CcpgStack<T>&, Matrix<double>*,             \
                              std::vector<double>*, GridImage*);

LOFI_INSTANTIATE_GEOMETRY(float)
LOFI_INSTANTIATE_GEOMETRY(double)

}  // namespace lofi

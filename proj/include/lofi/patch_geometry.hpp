#pragma once

#include <span>
#include <string>
#include <vector>

#include "lofi/image_grid.hpp"
#include "lofi/nn.hpp"

namespace lofi {

// K sampling offsets (dx, dy) in normalized units around a query point.
struct PatchOffsets {
  int rings = 0;
  int points_per_ring = 0;
  double spacing = 0.0;
  bool learnable = false;
  std::vector<double> offsets;  // [K][2]

  int count() const { return static_cast<int>(offsets.size() / 2); }
  double max_norm() const;
};

// Ring m = 1..rings at radius m * spacing, P points per ring starting on +x.
PatchOffsets init_circular(int rings, int points_per_ring, double spacing);

// patch[k][c] = sample(img, center + offsets[k]); `out` holds K * C values.
void extract_patch(const GridImage& img, Coord center, std::span<const double> offsets,
                   Boundary boundary, std::span<double> out);

// Adds the gradients of one extraction: dL/dcenter into grad_center (2),
// dL/doffsets into grad_offsets (2K, may be empty) and the sampling
// transpose into image_grad (may be null).
void extract_patch_backward(const GridImage& img, Coord center,
                            std::span<const double> offsets, Boundary boundary,
                            std::span<const double> upstream, std::span<double> grad_center,
                            std::span<double> grad_offsets, GridImage* image_grad);

// Batched extraction. `offsets` is 1 x 2K (shared) or B x 2K (per query).
template <class T>
Matrix<T> extract_patches(const GridImage& img, std::span<const Coord> centers,
                          const Matrix<double>& offsets, Boundary boundary);

// Reverse of extract_patches. `grad_offsets` (same shape as `offsets`) and
// `grad_centers` ([B][2]) are accumulated when non-null.
template <class T>
void extract_patches_backward(const GridImage& img, std::span<const Coord> centers,
                              const Matrix<double>& offsets, Boundary boundary,
                              const Matrix<T>& upstream, Matrix<double>* grad_offsets,
                              std::vector<double>* grad_centers, GridImage* image_grad);

// T refinement networks mapping a flattened patch [K * C_pre] to residual
// offsets [2K], bounded by rho_max * tanh.
template <class T>
struct CcpgStack {
  std::vector<MlpParams<T>> stages;
  double rho_max = 0.0;

  // Last layer of every stage is zero so refinement starts at the base.
  static CcpgStack create(int stage_count, int patch_width, int offset_count,
                          std::span<const int> hidden, double rho_max, Rng& rng);
  CcpgStack zeros_like() const;
  int stage_count() const { return static_cast<int>(stages.size()); }
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, std::vector<TensorRef<T>>& out);
  void set_zero();
};

template <class T>
struct CcpgCache {
  std::vector<Matrix<T>> patches;        // p^0 .. p^T
  std::vector<Matrix<double>> offsets;   // Delta^1 .. Delta^T, [B][2K]
  std::vector<Matrix<T>> squashed;       // tanh of each stage output
  std::vector<MlpCache<T>> stage_caches;
};

// Returns the final patch p^T. `trace`, when non-null, receives T + 1
// offset matrices ([B][2K]; entry 0 is the base repeated).
template <class T>
Matrix<T> ccpg_refine(const GridImage& img, std::span<const Coord> centers,
                      const PatchOffsets& base, const CcpgStack<T>& stack,
                      Boundary boundary, CcpgCache<T>* cache,
                      std::vector<Matrix<double>>* trace = nullptr);

// Backpropagates dL/dp^T. Stage gradients go to `grads`; base offsets,
// centers and image gradients are accumulated when the pointers are set.
template <class T>
void ccpg_backward(const GridImage& img, std::span<const Coord> centers,
                   const PatchOffsets& base, const CcpgStack<T>& stack, Boundary boundary,
                   const CcpgCache<T>& cache, const Matrix<T>& upstream,
                   CcpgStack<T>& grads, Matrix<double>* grad_base,
                   std::vector<double>* grad_centers, GridImage* image_grad);

// Shared offsets as a 1 x 2K matrix.
Matrix<double> offsets_row(const PatchOffsets& offsets);

}  // namespace lofi

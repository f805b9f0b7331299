#pragma once

#include <functional>
#include <vector>

#include "lofi/forward_ops.hpp"
#include "lofi/image_grid.hpp"

namespace lofi {

using ImageMap = std::function<GridImage(const GridImage&)>;

struct CgResult {
  GridImage x;
  int iterations = 0;
  double relative_residual = 0.0;
};

// Conjugate gradients for an SPD map. Stops when ||r|| <= tol ||b||;
// throws a convergence error after max_iter iterations.
CgResult cg_solve(const ImageMap& apply_normal, const GridImage& rhs, double tol = 1e-10,
                  int max_iter = 500);

// (A*A + alpha)^-1 (A*q + alpha z): closed form when the operator has one
// (unless force_cg), CG otherwise.
GridImage data_solve(const LinearOperator& op, const GridImage& q, const GridImage& z,
                     double alpha, bool force_cg = false);

struct AdmmConfig {
  double alpha = 0.05;
  int iterations = 90;
  // The denoiser sees f_k + u_{k-1}, the minimizer of the scaled augmented
  // Lagrangian ||f - v + u||^2 over v. Setting this feeds f_k - u_{k-1}
  // instead, which diverges on unobserved pixels for denoisers that keep
  // low frequencies (iteration eigenvalue 2).
  bool subtract_dual = false;
  // Called after every iteration with (k, f_k, v_k).
  std::function<void(int, const GridImage&, const GridImage&)> on_iteration;
};

struct AdmmResult {
  GridImage reconstruction;  // v_K
  GridImage f;
  GridImage u;
  std::vector<double> primal_residual;  // ||f_k - v_k|| for k = 1..K
};

// Plug-and-play ADMM from zero initialization:
//   f_k = h(v_{k-1} - u_{k-1}; alpha), v_k = D(f_k + u_{k-1}), u_k = u_{k-1} + f_k - v_k.
AdmmResult admm_run(const LinearOperator& op, const GridImage& q, const ImageMap& denoiser,
                    const AdmmConfig& config);

}  // namespace lofi

#include "lofi/admm.hpp"

#include <cmath>
#include <string>

#include "lofi/error.hpp"

namespace lofi {

namespace {

double dot(const GridImage& a, const GridImage& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

void axpy(double a, const GridImage& x, GridImage& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += a * x.data()[i];
}

}  // namespace

CgResult cg_solve(const ImageMap& apply_normal, const GridImage& rhs, double tol, int max_iter) {
  CgResult res;
  res.x = GridImage(rhs.shape());
  const double bnorm = std::sqrt(dot(rhs, rhs));
  if (bnorm == 0.0) return res;
  GridImage r = rhs;
  GridImage p = r;
  double rr = dot(r, r);
  for (int it = 1; it <= max_iter; ++it) {
    const GridImage ap = apply_normal(p);
    if (ap.shape() != rhs.shape()) throw Error(ErrorCode::Shape, "CG operator changed the shape");
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) {
      throw Error(ErrorCode::Numeric, "CG operator is not positive definite (p'Ap = " +
                                          std::to_string(pap) + ")");
    }
    const double step = rr / pap;
    axpy(step, p, res.x);
    axpy(-step, ap, r);
    const double rr_next = dot(r, r);
    res.iterations = it;
    res.relative_residual = std::sqrt(rr_next) / bnorm;
    if (res.relative_residual <= tol) return res;
    const double beta = rr_next / rr;
    for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = r.data()[i] + beta * p.data()[i];
    rr = rr_next;
  }
  throw Error(ErrorCode::Convergence, "CG did not converge in " + std::to_string(max_iter) +
                                          " iterations (relative residual " +
                                          std::to_string(res.relative_residual) + ")");
}

GridImage data_solve(const LinearOperator& op, const GridImage& q, const GridImage& z,
                     double alpha, bool force_cg) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidInput, "alpha must be positive");
  if (op.has_data_prox() && !force_cg) return op.data_prox(z, q, alpha);
  GridImage rhs = op.adjoint(q);
  if (rhs.shape() != z.shape()) throw Error(ErrorCode::Shape, "data_solve: z has the wrong shape");
  axpy(alpha, z, rhs);
  const ImageMap normal = [&](const GridImage& x) {
    GridImage y = op.adjoint(op.apply(x));
    axpy(alpha, x, y);
    return y;
  };
  return cg_solve(normal, rhs).x;
}

AdmmResult admm_run(const LinearOperator& op, const GridImage& q, const ImageMap& denoiser,
                    const AdmmConfig& config) {
  if (!(config.alpha > 0.0)) throw Error(ErrorCode::InvalidInput, "ADMM alpha must be positive");
  if (config.iterations < 0) throw Error(ErrorCode::InvalidInput, "ADMM iterations must be >= 0");
  const Shape shape = op.domain();
  AdmmResult res;
  res.f = GridImage(shape);
  res.u = GridImage(shape);
  GridImage v(shape);
  for (int k = 1; k <= config.iterations; ++k) {
    GridImage z = v;
    axpy(-1.0, res.u, z);
    res.f = data_solve(op, q, z, config.alpha);
    GridImage noisy = res.f;
    axpy(config.subtract_dual ? -1.0 : 1.0, res.u, noisy);
    v = denoiser(noisy);
    if (v.shape() != shape) throw Error(ErrorCode::Shape, "denoiser changed the image shape");
    double residual = 0.0;
    bool finite = true;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = res.f.data()[i] - v.data()[i];
      residual += d * d;
      res.u.data()[i] += d;
      finite = finite && std::isfinite(d) && std::isfinite(res.u.data()[i]);
    }
    if (!finite) {
      throw Error(ErrorCode::Numeric, "ADMM iterate became non-finite at iteration " +
                                          std::to_string(k));
    }
    res.primal_residual.push_back(std::sqrt(residual));
    if (config.on_iteration) config.on_iteration(k, res.f, v);
  }
  res.reconstruction = std::move(v);
  return res;
}

}  // namespace lofi

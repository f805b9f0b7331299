#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lofi/fft.hpp"
#include "lofi/image_grid.hpp"
#include "lofi/nn.hpp"

namespace lofi {

struct NoiseSpec {
  enum class Kind { Sigma, Snr };
  Kind kind = Kind::Sigma;
  double value = 0.0;  // absolute sigma, or SNR in dB

  static NoiseSpec sigma(double s) { return {Kind::Sigma, s}; }
  static NoiseSpec snr_db(double db) { return {Kind::Snr, db}; }
};

// Noise level implied by `spec` for signal x: sigma = ||x|| / (sqrt(n) 10^(snr/20)).
double noise_sigma(const GridImage& x, const NoiseSpec& spec);
GridImage awgn(const GridImage& x, const NoiseSpec& spec, Rng& rng);

// Real linear map between grid images. Complex-valued measurements are
// stored as two channels (re, im).
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;

  virtual std::string name() const = 0;
  virtual Shape domain() const = 0;
  virtual Shape range() const = 0;
  virtual GridImage apply(const GridImage& f) const = 0;
  virtual GridImage adjoint(const GridImage& q) const = 0;

  // Closed-form (A*A + alpha)^-1 (A*q + alpha z) when available.
  virtual bool has_data_prox() const { return false; }
  virtual GridImage data_prox(const GridImage& z, const GridImage& q, double alpha) const;

  GridImage simulate(const GridImage& f, const NoiseSpec& noise, Rng& rng) const;

 protected:
  void check_domain(const GridImage& f) const;
  void check_range(const GridImage& q) const;
};

class IdentityOp : public LinearOperator {
 public:
  explicit IdentityOp(Shape shape) : shape_(shape) {}
  std::string name() const override { return "identity"; }
  Shape domain() const override { return shape_; }
  Shape range() const override { return shape_; }
  GridImage apply(const GridImage& f) const override;
  GridImage adjoint(const GridImage& q) const override;
  bool has_data_prox() const override { return true; }
  GridImage data_prox(const GridImage& z, const GridImage& q, double alpha) const override;

 private:
  Shape shape_;
};

// Elementwise multiplication by fixed weights.
class DiagonalOp : public LinearOperator {
 public:
  explicit DiagonalOp(GridImage weights) : weights_(std::move(weights)) {}
  std::string name() const override { return "diagonal"; }
  Shape domain() const override { return weights_.shape(); }
  Shape range() const override { return weights_.shape(); }
  GridImage apply(const GridImage& f) const override;
  GridImage adjoint(const GridImage& q) const override { return apply(q); }
  bool has_data_prox() const override { return true; }
  GridImage data_prox(const GridImage& z, const GridImage& q, double alpha) const override;
  const GridImage& weights() const { return weights_; }

 protected:
  GridImage weights_;
};

// Binary pixel mask (1 = observed).
class InpaintOp : public DiagonalOp {
 public:
  explicit InpaintOp(GridImage mask);
  std::string name() const override { return "inpaint"; }
  const GridImage& mask() const { return weights_; }
};

// Mask with each pixel dropped independently with probability p.
GridImage random_pixel_mask(int height, int width, double p, Rng& rng);

// Unitary 2D DFT followed by a binary frequency mask; measurements are
// complex (two channels). Domain is single-channel M x M.
class FourierMaskOp : public LinearOperator {
 public:
  explicit FourierMaskOp(GridImage mask);
  std::string name() const override { return "fourier_mask"; }
  Shape domain() const override { return {mask_.height(), mask_.width(), 1}; }
  Shape range() const override { return {mask_.height(), mask_.width(), 2}; }
  GridImage apply(const GridImage& f) const override;
  GridImage adjoint(const GridImage& q) const override;
  bool has_data_prox() const override { return true; }
  GridImage data_prox(const GridImage& z, const GridImage& q, double alpha) const override;
  const GridImage& mask() const { return mask_; }

 private:
  GridImage mask_;
};

// Elliptical uv tracks through the frequency plane in FFT bin order,
// made Hermitian-symmetric; DC is always observed.
GridImage uv_mask_gen(int size, int tracks, Rng& rng);
double mask_coverage(const GridImage& mask);

// Lensing multiplier D over integer FFT frequencies, D(0,0) = 1.
ComplexField ks_multiplier(int size);

// kappa -> complex shear (two channels). A*A = I.
class KsOp : public LinearOperator {
 public:
  explicit KsOp(int size);
  std::string name() const override { return "kaiser_squires"; }
  Shape domain() const override { return {size_, size_, 1}; }
  Shape range() const override { return {size_, size_, 2}; }
  GridImage apply(const GridImage& kappa) const override;
  GridImage adjoint(const GridImage& gamma) const override;
  bool has_data_prox() const override { return true; }
  GridImage data_prox(const GridImage& z, const GridImage& q, double alpha) const override;

 private:
  int size_;
  ComplexField d_;
};

GridImage ks_forward(const GridImage& kappa);
// Naive inversion: real part of ifft(conj(D) fft(gamma)).
GridImage ks_inverse(const GridImage& gamma);
double ks_noise_sigma(double sigma_e, double theta_arcmin, int n_grid, double n_gal);

// Parallel-beam line integrals in pixel units. Detector j sits at offset
// j - (N - 1) / 2 from the image center; rays are sampled every half pixel
// with bilinear interpolation (zero outside the image).
class RadonOp : public LinearOperator {
 public:
  RadonOp(int size, std::vector<double> angles);
  std::string name() const override { return "radon"; }
  Shape domain() const override { return {size_, size_, 1}; }
  Shape range() const override { return {static_cast<int>(angles_.size()), size_, 1}; }
  GridImage apply(const GridImage& f) const override;
  GridImage adjoint(const GridImage& sino) const override;
  const std::vector<double>& angles() const { return angles_; }

 private:
  int size_;
  std::vector<double> angles_;
  int steps_;
};

// count angles uniform on [0, pi).
std::vector<double> uniform_angles(int count);

GridImage radon(const GridImage& f, const std::vector<double>& angles);

enum class FbpFilter { Ramp, Hann };

// Ramp-filtered (optionally Hann-apodized) backprojection scaled by
// pi / (2 * angles); pixels outside the inscribed disk are zeroed.
GridImage fbp(const GridImage& sino, const std::vector<double>& angles,
              FbpFilter filter = FbpFilter::Ramp);

// 1 inside the disk inscribed in an N x N grid, 0 outside.
GridImage disk_mask(int size);

}  // namespace lofi

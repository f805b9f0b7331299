#pragma once

#include <string>
#include <vector>

#include "lofi/image_grid.hpp"

namespace lofi {

// 10 log10(peak^2 / MSE); +inf when the images are identical.
double psnr(const GridImage& x, const GridImage& ref, double peak = 1.0);

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 = 0.01,
// K2 = 0.03), averaged over channels. Needs at least 11x11 pixels.
double ssim(const GridImage& x, const GridImage& ref, double peak = 1.0);

struct MetricRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double peak = 1.0;

  void add(std::string name, const GridImage& x, const GridImage& ref);
  double mean_psnr() const;
  double mean_ssim() const;
};

}  // namespace lofi

#pragma once

#include <cstdint>
#include <string>

#include "volnet/volume.hpp"

namespace volnet {

double rmse(const VolumeF& a, const VolumeF& b);

/// 20*log10(peak / rmse); +infinity when rmse == 0.
double psnr_from_rmse(double rmse_value, double peak = 255.0);
double psnr(const VolumeF& a, const VolumeF& b, double peak = 255.0);

/// Mean local SSIM over the valid region of an 11^3 Gaussian window
/// (sigma 1.5), C1 = (0.01 peak)^2, C2 = (0.03 peak)^2. Needs every extent >= 11.
double ssim(const VolumeF& a, const VolumeF& b, double peak = 255.0);

inline constexpr int kSsimWindow = 11;

struct MetricReport {
  double rmse = 0.0;
  double psnr = 0.0;
  double ssim = 1.0;
  double seconds = 0.0;
  std::int64_t parameters = 0;
};

MetricReport evaluate(const VolumeF& sr, const VolumeF& gnd, double peak = 255.0);

/// "inf" for +infinity, otherwise fixed with `decimals` places.
std::string format_metric(double v, int decimals);

/// Header line plus one row: rmse,psnr,ssim,seconds,parameters.
std::string to_csv(const MetricReport& r);
std::string to_json(const MetricReport& r);

}  // namespace volnet

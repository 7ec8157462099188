#include "volnet/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace volnet {

namespace {

void require_same(const VolumeF& a, const VolumeF& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  }
  if (a.empty()) throw ShapeError(std::string(what) + ": empty volume");
}

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// One valid-region pass along `axis` of a dense field (Z fastest).
std::vector<double> filter_axis(const std::vector<double>& f, Dims& dims, int axis,
                                const std::array<double, kSsimWindow>& w) {
  Dims od = dims;
  od[static_cast<std::size_t>(axis)] -= kSsimWindow - 1;
  const std::size_t stride = axis == 0 ? static_cast<std::size_t>(dims[1]) * dims[2]
                           : axis == 1 ? static_cast<std::size_t>(dims[2])
                                       : 1;
  std::vector<double> out(voxel_count(od));
  std::size_t o = 0;
  for (int x = 0; x < od[0]; ++x) {
    for (int y = 0; y < od[1]; ++y) {
      for (int z = 0; z < od[2]; ++z, ++o) {
        const std::size_t base = (static_cast<std::size_t>(x) * dims[1] + y) * dims[2] + z;
        double acc = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) acc += w[static_cast<std::size_t>(k)] * f[base + k * stride];
        out[o] = acc;
      }
    }
  }
  dims = od;
  return out;
}

std::vector<double> gaussian_filter(std::vector<double> f, Dims dims) {
  const auto w = gaussian_window();
  for (int axis = 0; axis < 3; ++axis) f = filter_axis(f, dims, axis, w);
  return f;
}

}  // namespace

double rmse(const VolumeF& a, const VolumeF& b) {
  require_same(a, b, "rmse");
  double acc = 0.0;
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double psnr_from_rmse(double rmse_value, double peak) {
  if (rmse_value < 0.0 || !(peak > 0.0)) throw std::invalid_argument("psnr: need rmse >= 0 and peak > 0");
  if (rmse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak / rmse_value);
}

double psnr(const VolumeF& a, const VolumeF& b, double peak) { return psnr_from_rmse(rmse(a, b), peak); }

double ssim(const VolumeF& a, const VolumeF& b, double peak) {
  require_same(a, b, "ssim");
  if (a.channels() != 1) throw ShapeError("ssim: expected single-channel volumes");
  for (int d : a.dims()) {
    if (d < kSsimWindow) throw ShapeError("ssim: volume " + to_string(a.dims()) + " smaller than the 11^3 window");
  }
  const std::size_t n = a.size();
  std::vector<double> fa(n), fb(n), faa(n), fbb(n), fab(n);
  for (std::size_t i = 0; i < n; ++i) {
    fa[i] = a.data()[i];
    fb[i] = b.data()[i];
    faa[i] = fa[i] * fa[i];
    fbb[i] = fb[i] * fb[i];
    fab[i] = fa[i] * fb[i];
  }
  const Dims dims = a.dims();
  const auto mu_a = gaussian_filter(std::move(fa), dims);
  const auto mu_b = gaussian_filter(std::move(fb), dims);
  const auto e_aa = gaussian_filter(std::move(faa), dims);
  const auto e_bb = gaussian_filter(std::move(fbb), dims);
  const auto e_ab = gaussian_filter(std::move(fab), dims);
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    sum += num / den;
  }
  return sum / static_cast<double>(mu_a.size());
}

MetricReport evaluate(const VolumeF& sr, const VolumeF& gnd, double peak) {
  MetricReport r;
  r.rmse = rmse(sr, gnd);
  r.psnr = psnr_from_rmse(r.rmse, peak);
  r.ssim = ssim(sr, gnd, peak);
  return r;
}

std::string format_metric(double v, int decimals) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string to_csv(const MetricReport& r) {
  std::ostringstream out;
  out << "rmse,psnr,ssim,seconds,parameters\n"
      << format_metric(r.rmse, 4) << ',' << format_metric(r.psnr, 2) << ',' << format_metric(r.ssim, 4) << ','
      << format_metric(r.seconds, 3) << ',' << r.parameters << '\n';
  return out.str();
}

std::string to_json(const MetricReport& r) {
  // Numbers keep the fixed table precision; a non-finite psnr becomes "inf".
  auto fixed = [](double v, int decimals) -> nlohmann::json {
    if (!std::isfinite(v)) return format_metric(v, decimals);
    return nlohmann::json::parse(format_metric(v, decimals));
  };
  nlohmann::json j;
  j["rmse"] = fixed(r.rmse, 4);
  j["psnr"] = fixed(r.psnr, 2);
  j["ssim"] = fixed(r.ssim, 4);
  j["seconds"] = fixed(r.seconds, 3);
  j["parameters"] = r.parameters;
  return j.dump(2) + "\n";
}

}  // namespace volnet

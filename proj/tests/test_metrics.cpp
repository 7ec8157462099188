#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "reference.hpp"
#include "volnet/metrics.hpp"

using namespace volnet;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(31);
  return r;
}

VolumeF noisy(const VolumeF& base, double amplitude) {
  std::normal_distribution<double> n(0.0, amplitude);
  VolumeF out = base;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = static_cast<float>(out.data()[i] + n(rng()));
  return out;
}

// Single-window SSIM of two 11^3 volumes, written directly from the
// weighted-moment definition.
double window_ssim(const VolumeF& a, const VolumeF& b, double peak) {
  double g[11], norm = 0;
  for (int i = 0; i < 11; ++i) norm += g[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5));
  double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
  for (int x = 0; x < 11; ++x)
    for (int y = 0; y < 11; ++y)
      for (int z = 0; z < 11; ++z) {
        const double w = g[x] * g[y] * g[z] / (norm * norm * norm);
        const double va = a(0, x, y, z), vb = b(0, x, y, z);
        ma += w * va;
        mb += w * vb;
        saa += w * va * va;
        sbb += w * vb * vb;
        sab += w * va * vb;
      }
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
  return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

TEST(Psnr, TricubicAnchors) {
  EXPECT_NEAR(psnr_from_rmse(6.752, 255.0), 31.54, 0.01);
  EXPECT_NEAR(psnr_from_rmse(6.998), 31.23, 0.01);
  EXPECT_EQ(psnr_from_rmse(255.0), 0.0);
  EXPECT_NEAR(psnr_from_rmse(1.0, 1.0), 0.0, 1e-15);
  EXPECT_EQ(psnr_from_rmse(0.0), std::numeric_limits<double>::infinity());
}

TEST(Psnr, MonotoneInRmse) {
  double prev = std::numeric_limits<double>::infinity();
  for (double r = 0.01; r < 300; r *= 1.7) {
    const double p = psnr_from_rmse(r);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Rmse, ValuesAndProperties) {
  VolumeF a(1, Dims{2, 2, 2}), b(1, Dims{2, 2, 2});
  a.matrix().setConstant(3);
  b.matrix().setConstant(3);
  b(0, 1, 1, 1) = 7;  // one voxel off by 4 -> sqrt(16 / 8)
  EXPECT_NEAR(rmse(a, b), std::sqrt(2.0), 1e-12);
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());

  const auto x = volnet::testing::random_volume<float>(1, Dims{6, 5, 4}, rng(), 0, 255);
  const auto y = volnet::testing::random_volume<float>(1, Dims{6, 5, 4}, rng(), 0, 255);
  const auto z = volnet::testing::random_volume<float>(1, Dims{6, 5, 4}, rng(), 0, 255);
  EXPECT_DOUBLE_EQ(rmse(x, y), rmse(y, x));
  EXPECT_LE(rmse(x, z), rmse(x, y) + rmse(y, z) + 1e-9);
  EXPECT_THROW(rmse(x, a), ShapeError);
}

TEST(Ssim, IdenticalIsExactlyOne) {
  const auto a = volnet::testing::random_volume<float>(1, Dims{14, 12, 11}, rng(), 0, 255);
  EXPECT_EQ(ssim(a, a), 1.0);
  VolumeF zero(1, Dims{11, 11, 11});
  EXPECT_EQ(ssim(zero, zero), 1.0);
}

TEST(Ssim, ConstantPairClosedForm) {
  VolumeF a(1, Dims{12, 11, 13}), b(1, Dims{12, 11, 13});
  a.matrix().setConstant(100);
  b.matrix().setConstant(60);
  const double c1 = (0.01 * 255) * (0.01 * 255);
  EXPECT_NEAR(ssim(a, b), (2 * 100.0 * 60 + c1) / (100.0 * 100 + 60 * 60 + c1), 1e-12);
}

TEST(Ssim, MatchesDirectSingleWindow) {
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = volnet::testing::random_volume<float>(1, Dims{11, 11, 11}, rng(), 0, 255);
    const auto b = noisy(a, 10.0 + 20 * trial);
    EXPECT_NEAR(ssim(a, b), window_ssim(a, b, 255.0), 1e-10);
  }
}

TEST(Ssim, SymmetryTranspositionAndDegradation) {
  const auto a = volnet::testing::random_volume<float>(1, Dims{13, 12, 14}, rng(), 0, 255);
  const auto b = noisy(a, 15.0);
  const auto c = noisy(a, 40.0);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, c), ssim(a, b));
  EXPECT_LT(ssim(a, b), 1.0);

  // Swapping the x and z axes permutes windows without changing the mean.
  auto transpose = [](const VolumeF& v) {
    const Dims& n = v.dims();
    VolumeF t(1, Dims{n[2], n[1], n[0]});
    for (int x = 0; x < n[0]; ++x)
      for (int y = 0; y < n[1]; ++y)
        for (int z = 0; z < n[2]; ++z) t(0, z, y, x) = v(0, x, y, z);
    return t;
  };
  EXPECT_NEAR(ssim(transpose(a), transpose(b)), ssim(a, b), 1e-10);
  EXPECT_THROW(ssim(VolumeF(1, Dims{10, 11, 11}), VolumeF(1, Dims{10, 11, 11})), ShapeError);
}

TEST(Report, FormattingAndSerialization) {
  EXPECT_EQ(format_metric(std::numeric_limits<double>::infinity(), 2), "inf");
  EXPECT_EQ(format_metric(0.0, 4), "0.0000");
  EXPECT_EQ(format_metric(31.5449, 2), "31.54");

  const auto a = volnet::testing::random_volume<float>(1, Dims{11, 11, 11}, rng(), 0, 255);
  MetricReport same = evaluate(a, a);
  EXPECT_EQ(same.rmse, 0.0);
  EXPECT_EQ(same.ssim, 1.0);
  same.parameters = 1234;
  const std::string csv = to_csv(same);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "rmse,psnr,ssim,seconds,parameters");
  EXPECT_NE(csv.find("0.0000,inf,1.0000,"), std::string::npos);
  EXPECT_NE(csv.find(",1234"), std::string::npos);

  const MetricReport diff = evaluate(noisy(a, 5.0), a);
  const auto j = nlohmann::json::parse(to_json(diff));
  EXPECT_NEAR(j.at("rmse").get<double>(), diff.rmse, 1e-4);
  EXPECT_NEAR(j.at("psnr").get<double>(), diff.psnr, 1e-2);
  EXPECT_NEAR(j.at("ssim").get<double>(), diff.ssim, 1e-4);
  EXPECT_TRUE(j.contains("parameters"));
  EXPECT_NO_THROW(nlohmann::json::parse(to_json(same)));
}

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "nifti_fixture.hpp"
#include "reference.hpp"
#include "volnet/data_io.hpp"

using namespace volnet;
using volnet::testing::hand_nifti;
using volnet::testing::put;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("volnet_data_io_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string write_bytes(const std::string& name, const std::vector<char>& bytes) {
  const fs::path p = scratch_dir() / name;
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return p.string();
}

VolumeError rejection(const std::string& path) {
  try {
    read_volume(path);
  } catch (const VolumeIoError& e) {
    return e.code();
  }
  ADD_FAILURE() << path << " was accepted";
  return VolumeError::OpenFailed;
}

}  // namespace

TEST(Nifti, HandBuiltFileRoundTripsExactly) {
  const std::string path = write_bytes("hand.nii", hand_nifti());
  const VolumeFile info = probe_volume(path);
  EXPECT_EQ(info.format, VolumeFormat::Nifti1);
  EXPECT_EQ(info.dims, (Dims{2, 2, 2}));
  EXPECT_EQ(info.dtype, SampleType::Int16);
  EXPECT_EQ(info.data_offset, 352u);
  ASSERT_TRUE(info.spacing_mm.has_value());
  EXPECT_EQ(*info.spacing_mm, (std::array<double, 3>{0.5, 0.75, 2.0}));

  const VolumeF v = read_volume(path);
  ASSERT_EQ(v.dims(), (Dims{2, 2, 2}));
  int value = 1;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) EXPECT_EQ(v(0, x, y, z), static_cast<float>(value++)) << x << y << z;
}

TEST(Nifti, ScalingAndOtherSampleTypes) {
  auto buf = hand_nifti();
  put<float>(buf, 112, 2.0f);
  put<float>(buf, 116, -1.0f);
  const VolumeF scaled = read_volume(write_bytes("scaled.nii", buf));
  EXPECT_EQ(scaled(0, 1, 1, 1), 15.0f);

  std::vector<char> u8(352 + 8, 0);
  std::copy(buf.begin(), buf.begin() + 352, u8.begin());
  put<std::int16_t>(u8, 70, 2);
  put<std::int16_t>(u8, 72, 8);
  put<float>(u8, 112, 0.0f);  // slope 0 means unscaled
  for (int i = 0; i < 8; ++i) u8[352 + static_cast<std::size_t>(i)] = static_cast<char>(200 + i);
  EXPECT_EQ(read_volume(write_bytes("u8.nii", u8))(0, 1, 1, 1), 207.0f);

  std::vector<char> f32(352 + 32, 0);
  std::copy(buf.begin(), buf.begin() + 352, f32.begin());
  put<std::int16_t>(f32, 70, 16);
  put<std::int16_t>(f32, 72, 32);
  put<float>(f32, 112, 1.0f);
  put<float>(f32, 116, 0.0f);
  for (int i = 0; i < 8; ++i) put<float>(f32, 352 + 4 * static_cast<std::size_t>(i), -0.25f * static_cast<float>(i));
  EXPECT_EQ(read_volume(write_bytes("f32.nii", f32))(0, 1, 0, 0), -0.25f);
}

TEST(Nifti, CorruptedHeadersRejectedWithDistinctDiagnostics) {
  struct Case {
    std::string name;
    std::function<void(std::vector<char>&)> mutate;
    VolumeError expected;
  };
  const std::vector<Case> cases = {
      {"sizeof_hdr", [](auto& b) { put<std::int32_t>(b, 0, 540); }, VolumeError::BadHeaderSize},
      {"magic", [](auto& b) { std::memcpy(b.data() + 344, "ni1\0", 4); }, VolumeError::BadMagic},
      {"dim0", [](auto& b) { put<std::int16_t>(b, 40, 9); }, VolumeError::BadDims},
      {"datatype", [](auto& b) { put<std::int16_t>(b, 70, 128); }, VolumeError::UnsupportedDtype},
      {"bitpix", [](auto& b) { put<std::int16_t>(b, 72, 32); }, VolumeError::BitpixMismatch},
      {"vox_offset", [](auto& b) { put<float>(b, 108, 100.0f); }, VolumeError::BadVoxOffset},
      {"truncated", [](auto& b) { b.resize(b.size() - 3); }, VolumeError::TruncatedPayload},
      {"short_file", [](auto& b) { b.resize(200); }, VolumeError::BadHeaderSize},
      {"negative_dim", [](auto& b) { put<std::int16_t>(b, 44, -2); }, VolumeError::BadDims},
  };
  std::set<std::string> messages;
  std::set<VolumeError> codes;
  for (const auto& c : cases) {
    auto buf = hand_nifti();
    c.mutate(buf);
    const std::string path = write_bytes("bad_" + c.name + ".nii", buf);
    EXPECT_EQ(rejection(path), c.expected) << c.name;
    try {
      read_volume(path);
    } catch (const VolumeIoError& e) {
      messages.insert(std::string(e.what()).substr(0, std::string(e.what()).find(':')));
    }
    codes.insert(c.expected);
  }
  EXPECT_GE(codes.size(), 7u);
  EXPECT_EQ(messages.size(), codes.size());
  EXPECT_EQ(rejection((scratch_dir() / "missing.nii").string()), VolumeError::OpenFailed);
}

TEST(RawPair, RoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  const VolumeF v = volnet::testing::random_volume<float>(1, Dims{5, 3, 4}, rng, -1e6, 1e6);
  const std::string stem = (scratch_dir() / "pair").string();
  const VolumeFile f = write_volume(v, stem + ".f32raw", VolumeFormat::Raw, std::array<double, 3>{1, 2, 3});
  EXPECT_TRUE(fs::exists(stem + ".f32raw"));
  EXPECT_TRUE(fs::exists(stem + ".json"));
  for (const std::string& p : {stem, stem + ".json", stem + ".f32raw"}) {
    const VolumeF back = read_volume(p);
    ASSERT_EQ(back.dims(), v.dims());
    EXPECT_EQ(std::memcmp(back.data(), v.data(), v.size() * sizeof(float)), 0) << p;
  }
  EXPECT_EQ(probe_volume(stem).spacing_mm, f.spacing_mm);
  EXPECT_EQ(fs::file_size(stem + ".f32raw"), v.size() * sizeof(float));
  EXPECT_THROW(write_volume(v, stem + ".nii", VolumeFormat::Nifti1), VolumeIoError);
  EXPECT_THROW(write_volume(VolumeF(2, Dims{2, 2, 2}), stem), VolumeIoError);
}

TEST(RawPair, FileOrderIsXFastest) {
  const std::string stem = (scratch_dir() / "order").string();
  std::ofstream(stem + ".json") << R"({"dims": [3, 2, 1], "dtype": "float32"})";
  std::vector<char> payload(6 * 4);
  for (int i = 0; i < 6; ++i) put<float>(payload, 4 * static_cast<std::size_t>(i), static_cast<float>(i));
  write_bytes("order.f32raw", payload);
  const VolumeF v = read_volume(stem);
  EXPECT_EQ(v(0, 2, 0, 0), 2.0f);
  EXPECT_EQ(v(0, 0, 1, 0), 3.0f);
  EXPECT_EQ(v(0, 2, 1, 0), 5.0f);
}

TEST(RawPair, SidecarErrors) {
  const std::string stem = (scratch_dir() / "bad_sidecar").string();
  std::vector<char> payload(8 * 4, 0);
  write_bytes("bad_sidecar.f32raw", payload);
  auto code = [&](const std::string& sidecar) {
    std::ofstream(stem + ".json") << sidecar;
    return rejection(stem);
  };
  EXPECT_EQ(code("{not json"), VolumeError::BadSidecar);
  EXPECT_EQ(code(R"({"dims": [2, 2]})"), VolumeError::BadSidecar);
  EXPECT_EQ(code(R"({"dims": [2, 0, 2]})"), VolumeError::BadDims);
  EXPECT_EQ(code(R"({"dims": [2, 2, 2], "dtype": "complex64"})"), VolumeError::UnsupportedDtype);
  EXPECT_EQ(code(R"({"dims": [2, 2, 4]})"), VolumeError::TruncatedPayload);
  EXPECT_EQ(code(R"({"dims": [2, 2, 1]})"), VolumeError::BadSidecar);
  EXPECT_EQ(raw_stem("a/b.json"), "a/b");
  EXPECT_EQ(raw_stem("a/b.f32raw"), "a/b");
  EXPECT_EQ(raw_stem("a/b"), "a/b");
}

TEST(Preprocess, ClampAndNormalize) {
  VolumeF v(1, Dims{3, 1, 1});
  v(0, 0, 0, 0) = -2000;
  v(0, 1, 0, 0) = 0;
  v(0, 2, 0, 0) = 1000;
  PreprocessSpec spec;
  spec.hu_clamp = std::make_pair(-1000.0, 1000.0);
  const VolumeF out = preprocess(v, spec);
  EXPECT_EQ(out(0, 0, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(out(0, 1, 0, 0), 127.5f);
  EXPECT_EQ(out(0, 2, 0, 0), 255.0f);

  const VolumeF own = preprocess(v, PreprocessSpec{});
  EXPECT_EQ(own(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(own(0, 2, 0, 0), 255.0f);
  EXPECT_FLOAT_EQ(own(0, 1, 0, 0), 2000.0f / 3000.0f * 255.0f);

  PreprocessSpec bad;
  bad.hu_clamp = std::make_pair(5.0, 5.0);
  EXPECT_THROW(preprocess(v, bad), std::invalid_argument);
}

TEST(Keys, KernelShapeAndPartitionOfUnity) {
  EXPECT_EQ(keys_kernel(0.0), 1.0);
  EXPECT_EQ(keys_kernel(1.0), 0.0);
  EXPECT_EQ(keys_kernel(-2.0), 0.0);
  EXPECT_EQ(keys_kernel(2.5), 0.0);
  EXPECT_NEAR(keys_kernel(0.5), 0.5625, 1e-15);
  EXPECT_NEAR(keys_kernel(1.5), -0.0625, 1e-15);
  for (int i = 0; i <= 100; ++i) {
    const double phase = i / 100.0;
    const auto w = keys_weights(phase);
    EXPECT_NEAR(w[0] + w[1] + w[2] + w[3], 1.0, 1e-12);
    // Reproduces linear functions: sum w_k * (k - 1) = phase.
    EXPECT_NEAR(-w[0] + w[2] + 2 * w[3], phase, 1e-12);
  }
}

TEST(Tricubic, ShapesAndConstants) {
  VolumeD c(1, Dims{8, 6, 4});
  c.matrix().setConstant(42.0);
  const auto down = tricubic_resample(c, ResampleFactor{1, 2});
  EXPECT_EQ(down.dims(), (Dims{4, 3, 2}));
  EXPECT_LT(volnet::testing::max_abs_diff(down, [&] {
              VolumeD e(1, down.dims());
              e.matrix().setConstant(42.0);
              return e;
            }()),
            1e-12);
  const auto up = tricubic_resample(c, ResampleFactor{2, 1});
  EXPECT_EQ(up.dims(), (Dims{16, 12, 8}));
  EXPECT_NEAR(up.matrix().minCoeff(), 42.0, 1e-12);
  EXPECT_NEAR(up.matrix().maxCoeff(), 42.0, 1e-12);
  EXPECT_EQ(volnet::testing::max_abs_diff(tricubic_resample(c, ResampleFactor{3, 3}), c), 0.0);
  EXPECT_THROW(tricubic_resample(c, ResampleFactor{3, 1}), std::invalid_argument);
}

TEST(Tricubic, QuadraticsReproducedInInterior) {
  const Dims n{16, 12, 10};
  VolumeD v(1, n);
  auto f = [](double x, double y, double z) { return 3.0 + 0.5 * x - 1.25 * y + 0.1 * z; };
  for (int x = 0; x < n[0]; ++x)
    for (int y = 0; y < n[1]; ++y)
      for (int z = 0; z < n[2]; ++z) v(0, x, y, z) = f(x, y, z);
  const auto down = tricubic_resample(v, ResampleFactor{1, 2});
  const auto up = tricubic_resample(v, ResampleFactor{2, 1});
  for (int x = 1; x < n[0] / 2 - 1; ++x)
    for (int y = 1; y < n[1] / 2 - 1; ++y)
      for (int z = 1; z < n[2] / 2 - 1; ++z) EXPECT_NEAR(down(0, x, y, z), f(2 * x + 0.5, 2 * y + 0.5, 2 * z + 0.5), 1e-10);
  for (int x = 4; x < 2 * n[0] - 4; ++x)
    for (int y = 4; y < 2 * n[1] - 4; ++y)
      for (int z = 4; z < 2 * n[2] - 4; ++z)
        EXPECT_NEAR(up(0, x, y, z), f(x / 2.0 - 0.25, y / 2.0 - 0.25, z / 2.0 - 0.25), 1e-10);
}

TEST(Tricubic, Linearity) {
  std::mt19937_64 rng(9);
  const auto a = volnet::testing::random_volume<double>(1, Dims{8, 8, 6}, rng);
  const auto b = volnet::testing::random_volume<double>(1, Dims{8, 8, 6}, rng);
  VolumeD mix(1, a.dims());
  mix.matrix() = 2.0 * a.matrix() - 3.0 * b.matrix();
  for (ResampleFactor f : {ResampleFactor{1, 2}, ResampleFactor{2, 1}}) {
    const auto ra = tricubic_resample(a, f), rb = tricubic_resample(b, f), rm = tricubic_resample(mix, f);
    VolumeD expect(1, ra.dims());
    expect.matrix() = 2.0 * ra.matrix() - 3.0 * rb.matrix();
    EXPECT_LT(volnet::testing::max_abs_diff(rm, expect), 1e-10);
  }
}

TEST(Phantom, DeterministicAndInRange) {
  const VolumeF a = make_phantom(Dims{32, 40, 32}, 20, 3);
  const VolumeF b = make_phantom(Dims{32, 40, 32}, 20, 3);
  const VolumeF c = make_phantom(Dims{32, 40, 32}, 20, 4);
  EXPECT_EQ(a.dims(), (Dims{32, 40, 32}));
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
  EXPECT_GT(volnet::testing::max_abs_diff(a, c), 1.0);
  EXPECT_GE(a.matrix().minCoeff(), 0.0f);
  EXPECT_EQ(a.matrix().maxCoeff(), 255.0f);

  // Dark at every face, like air around a scanned object.
  float face = 0;
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      face = std::max({face, a(0, 0, i, j), a(0, 31, i, j), a(0, i, 0, j), a(0, i, 39, j), a(0, i, j, 0),
                       a(0, i, j, 31)});
    }
  }
  EXPECT_LT(face, 3.0f);

  const VolumeF bg = make_phantom(Dims{32, 32, 32}, 0, 3);
  EXPECT_GE(bg.matrix().minCoeff(), 0.0f);
  EXPECT_LE(bg.matrix().maxCoeff(), 255.0f);
  // Background only: neighbouring voxels away from the faded rim differ little.
  double step = 0;
  for (int x = 9; x < 24; ++x) step = std::max(step, std::abs(double(bg(0, x, 16, 16)) - bg(0, x - 1, 16, 16)));
  EXPECT_LT(step, 40.0);

  EXPECT_THROW(make_phantom(Dims{31, 32, 32}, 1, 1), ShapeError);
}

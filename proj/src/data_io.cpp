#include "volnet/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

namespace volnet {

std::string_view to_string(SampleType t) {
  switch (t) {
    case SampleType::Int16: return "int16";
    case SampleType::Float32: return "float32";
    case SampleType::UInt8: return "uint8";
  }
  return "unknown";
}

int sample_bytes(SampleType t) {
  switch (t) {
    case SampleType::Int16: return 2;
    case SampleType::Float32: return 4;
    case SampleType::UInt8: return 1;
  }
  return 0;
}

std::string_view to_string(VolumeError e) {
  switch (e) {
    case VolumeError::OpenFailed: return "open failed";
    case VolumeError::BadHeaderSize: return "bad header size";
    case VolumeError::BadMagic: return "bad magic";
    case VolumeError::BadDims: return "bad dimensions";
    case VolumeError::UnsupportedDtype: return "unsupported dtype";
    case VolumeError::BitpixMismatch: return "bitpix mismatch";
    case VolumeError::BadVoxOffset: return "bad vox_offset";
    case VolumeError::TruncatedPayload: return "truncated payload";
    case VolumeError::BadSidecar: return "bad sidecar";
    case VolumeError::WriteFailed: return "write failed";
    case VolumeError::UnsupportedFormat: return "unsupported format";
  }
  return "unknown";
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

constexpr std::size_t kNiftiHeaderSize = 348;

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw VolumeIoError(VolumeError::OpenFailed, "cannot open '" + path + "'");
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<char> bytes(size);
  in.seekg(0);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw VolumeIoError(VolumeError::OpenFailed, "cannot read '" + path + "'");
  }
  return bytes;
}

template <typename T>
T load(const std::vector<char>& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

bool is_nifti_path(const std::string& path) {
  return std::filesystem::path(path).extension() == ".nii";
}

VolumeFile parse_nifti(const std::string& path, const std::vector<char>& bytes) {
  if (bytes.size() < kNiftiHeaderSize) {
    throw VolumeIoError(VolumeError::BadHeaderSize, path + ": file shorter than a 348-byte header");
  }
  if (load<std::int32_t>(bytes, 0) != 348) {
    throw VolumeIoError(VolumeError::BadHeaderSize, path + ": sizeof_hdr is not 348");
  }
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
    throw VolumeIoError(VolumeError::BadMagic, path + ": magic is not \"n+1\"");
  }
  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(bytes, 40 + 2 * i);
  if (dim[0] < 3 || dim[0] > 7) {
    throw VolumeIoError(VolumeError::BadDims, path + ": dim[0] = " + std::to_string(dim[0]) + ", need 3..7");
  }
  for (int i = 1; i <= 3; ++i) {
    if (dim[static_cast<std::size_t>(i)] <= 0) {
      throw VolumeIoError(VolumeError::BadDims, path + ": dim[" + std::to_string(i) + "] <= 0");
    }
  }
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[static_cast<std::size_t>(i)] != 1) {
      throw VolumeIoError(VolumeError::BadDims, path + ": only single-frame 3D volumes are supported");
    }
  }
  VolumeFile f;
  f.path = path;
  f.format = VolumeFormat::Nifti1;
  f.dims = {dim[1], dim[2], dim[3]};
  const auto datatype = load<std::int16_t>(bytes, 70);
  switch (datatype) {
    case 2: f.dtype = SampleType::UInt8; break;
    case 4: f.dtype = SampleType::Int16; break;
    case 16: f.dtype = SampleType::Float32; break;
    default:
      throw VolumeIoError(VolumeError::UnsupportedDtype, path + ": datatype code " + std::to_string(datatype));
  }
  const auto bitpix = load<std::int16_t>(bytes, 72);
  if (bitpix != 8 * sample_bytes(f.dtype)) {
    throw VolumeIoError(VolumeError::BitpixMismatch,
                        path + ": bitpix " + std::to_string(bitpix) + " does not match " + std::string(to_string(f.dtype)));
  }
  const float vox_offset = load<float>(bytes, 108);
  if (!(vox_offset >= 352.0f) || vox_offset != std::floor(vox_offset)) {
    throw VolumeIoError(VolumeError::BadVoxOffset, path + ": vox_offset " + std::to_string(vox_offset));
  }
  f.data_offset = static_cast<std::size_t>(vox_offset);
  const float slope = load<float>(bytes, 112);
  const float inter = load<float>(bytes, 116);
  if (slope != 0.0f && std::isfinite(slope)) {
    f.slope = slope;
    f.intercept = std::isfinite(inter) ? inter : 0.0;
  }
  const std::array<float, 3> pix{load<float>(bytes, 80), load<float>(bytes, 84), load<float>(bytes, 88)};
  if (pix[0] > 0 && pix[1] > 0 && pix[2] > 0) f.spacing_mm = std::array<double, 3>{pix[0], pix[1], pix[2]};
  return f;
}

std::string sidecar_path(const std::string& stem) { return stem + ".json"; }
std::string payload_path(const std::string& stem) { return stem + ".f32raw"; }

VolumeFile parse_sidecar(const std::string& path) {
  const std::string stem = raw_stem(path);
  std::ifstream in(sidecar_path(stem));
  if (!in) throw VolumeIoError(VolumeError::OpenFailed, "cannot open sidecar '" + sidecar_path(stem) + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw VolumeIoError(VolumeError::BadSidecar, sidecar_path(stem) + ": " + e.what());
  }
  VolumeFile f;
  f.path = payload_path(stem);
  f.format = VolumeFormat::Raw;
  if (!j.is_object() || !j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3) {
    throw VolumeIoError(VolumeError::BadSidecar, sidecar_path(stem) + ": missing dims[3]");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (!j["dims"][i].is_number_integer() || j["dims"][i].get<int>() <= 0) {
      throw VolumeIoError(VolumeError::BadDims, sidecar_path(stem) + ": dims must be positive integers");
    }
    f.dims[i] = j["dims"][i].get<int>();
  }
  const std::string dtype = j.value("dtype", "float32");
  if (dtype == "float32") {
    f.dtype = SampleType::Float32;
  } else if (dtype == "int16") {
    f.dtype = SampleType::Int16;
  } else if (dtype == "uint8") {
    f.dtype = SampleType::UInt8;
  } else {
    throw VolumeIoError(VolumeError::UnsupportedDtype, sidecar_path(stem) + ": dtype '" + dtype + "'");
  }
  if (j.contains("spacing_mm")) {
    const auto& s = j["spacing_mm"];
    if (!s.is_array() || s.size() != 3) {
      throw VolumeIoError(VolumeError::BadSidecar, sidecar_path(stem) + ": spacing_mm must have 3 entries");
    }
    f.spacing_mm = std::array<double, 3>{s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
  }
  return f;
}

// File order is X-fastest; Volume order is Z-fastest.
VolumeF decode(const VolumeFile& f, const char* payload) {
  VolumeF vol(1, f.dims);
  const auto [X, Y, Z] = f.dims;
  std::size_t i = 0;
  for (int z = 0; z < Z; ++z) {
    for (int y = 0; y < Y; ++y) {
      for (int x = 0; x < X; ++x, ++i) {
        double v = 0;
        switch (f.dtype) {
          case SampleType::Float32: {
            float s;
            std::memcpy(&s, payload + 4 * i, 4);
            v = s;
            break;
          }
          case SampleType::Int16: {
            std::int16_t s;
            std::memcpy(&s, payload + 2 * i, 2);
            v = s;
            break;
          }
          case SampleType::UInt8:
            v = static_cast<unsigned char>(payload[i]);
            break;
        }
        vol(0, x, y, z) = static_cast<float>(f.slope == 1.0 && f.intercept == 0.0 ? v : v * f.slope + f.intercept);
      }
    }
  }
  return vol;
}

}  // namespace

std::string raw_stem(const std::string& path) {
  std::filesystem::path p(path);
  if (p.extension() == ".json" || p.extension() == ".f32raw") p.replace_extension();
  return p.string();
}

VolumeFile probe_volume(const std::string& path) {
  if (is_nifti_path(path)) return parse_nifti(path, read_file(path));
  return parse_sidecar(path);
}

VolumeF read_volume(const VolumeFile& file) {
  const std::vector<char> bytes = read_file(file.path);
  const std::size_t need = voxel_count(file.dims) * static_cast<std::size_t>(sample_bytes(file.dtype));
  if (file.format == VolumeFormat::Nifti1) {
    if (bytes.size() < file.data_offset + need) {
      throw VolumeIoError(VolumeError::TruncatedPayload, file.path + ": payload holds " +
                                                             std::to_string(bytes.size() - std::min(bytes.size(), file.data_offset)) +
                                                             " bytes, header declares " + std::to_string(need));
    }
    return decode(file, bytes.data() + file.data_offset);
  }
  if (bytes.size() < need) {
    throw VolumeIoError(VolumeError::TruncatedPayload,
                        file.path + ": payload holds " + std::to_string(bytes.size()) + " bytes, sidecar declares " +
                            std::to_string(need));
  }
  if (bytes.size() > need) {
    throw VolumeIoError(VolumeError::BadSidecar, file.path + ": payload larger than declared dims");
  }
  return decode(file, bytes.data());
}

VolumeF read_volume(const std::string& path) {
  if (is_nifti_path(path)) {
    const std::vector<char> bytes = read_file(path);
    const VolumeFile f = parse_nifti(path, bytes);
    const std::size_t need = voxel_count(f.dims) * static_cast<std::size_t>(sample_bytes(f.dtype));
    if (bytes.size() < f.data_offset + need) {
      throw VolumeIoError(VolumeError::TruncatedPayload, path + ": payload shorter than declared dims");
    }
    return decode(f, bytes.data() + f.data_offset);
  }
  return read_volume(parse_sidecar(path));
}

VolumeFile write_volume(const VolumeF& vol, const std::string& path, VolumeFormat format,
                        std::optional<std::array<double, 3>> spacing_mm) {
  if (format != VolumeFormat::Raw) {
    throw VolumeIoError(VolumeError::UnsupportedFormat, "only raw+sidecar volumes can be written");
  }
  if (vol.channels() != 1) {
    throw VolumeIoError(VolumeError::BadDims, "write_volume: expected a 1-channel volume");
  }
  const std::string stem = raw_stem(path);
  const auto [X, Y, Z] = vol.dims();
  std::vector<float> buf(vol.voxels());
  std::size_t i = 0;
  for (int z = 0; z < Z; ++z) {
    for (int y = 0; y < Y; ++y) {
      for (int x = 0; x < X; ++x) buf[i++] = vol(0, x, y, z);
    }
  }
  {
    std::ofstream out(payload_path(stem), std::ios::binary);
    if (!out) throw VolumeIoError(VolumeError::WriteFailed, "cannot open '" + payload_path(stem) + "'");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw VolumeIoError(VolumeError::WriteFailed, "failed writing '" + payload_path(stem) + "'");
  }
  nlohmann::json j = {{"dims", {X, Y, Z}}, {"dtype", "float32"}};
  if (spacing_mm) j["spacing_mm"] = *spacing_mm;
  {
    std::ofstream out(sidecar_path(stem));
    if (!out) throw VolumeIoError(VolumeError::WriteFailed, "cannot open '" + sidecar_path(stem) + "'");
    out << j.dump(2) << "\n";
    if (!out) throw VolumeIoError(VolumeError::WriteFailed, "failed writing '" + sidecar_path(stem) + "'");
  }
  VolumeFile f;
  f.path = payload_path(stem);
  f.format = VolumeFormat::Raw;
  f.dims = vol.dims();
  f.dtype = SampleType::Float32;
  f.spacing_mm = spacing_mm;
  return f;
}

VolumeF preprocess(const VolumeF& vol, const PreprocessSpec& spec) {
  VolumeF out = vol;
  double lo = 0, hi = 0;
  if (spec.hu_clamp) {
    std::tie(lo, hi) = *spec.hu_clamp;
    if (!(lo < hi)) throw std::invalid_argument("preprocess: clamp range needs lo < hi");
    out.matrix() = out.matrix().cwiseMax(static_cast<float>(lo)).cwiseMin(static_cast<float>(hi));
  } else {
    lo = vol.matrix().minCoeff();
    hi = vol.matrix().maxCoeff();
  }
  if (spec.normalize && hi > lo) {
    const double scale = 255.0 / (hi - lo);
    for (float& v : out.flat()) v = static_cast<float>((v - lo) * scale);
  }
  return out;
}

double keys_kernel(double x, double a) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

std::array<double, 4> keys_weights(double phase, double a) {
  return {keys_kernel(phase + 1.0, a), keys_kernel(phase, a), keys_kernel(1.0 - phase, a),
          keys_kernel(2.0 - phase, a)};
}

namespace {

struct AxisTable {
  std::vector<std::array<int, 4>> index;
  std::vector<std::array<double, 4>> weight;
};

AxisTable axis_table(int in, int out, ResampleFactor f) {
  AxisTable t;
  t.index.resize(static_cast<std::size_t>(out));
  t.weight.resize(static_cast<std::size_t>(out));
  for (int i = 0; i < out; ++i) {
    const double u = (i + 0.5) * f.denominator / f.numerator - 0.5;
    const double base = std::floor(u);
    const int b = static_cast<int>(base);
    t.weight[static_cast<std::size_t>(i)] = keys_weights(u - base);
    for (int k = 0; k < 4; ++k) t.index[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = std::clamp(b - 1 + k, 0, in - 1);
  }
  return t;
}

// Resamples one axis of every channel.
template <typename Scalar>
Volume<Scalar> resample_axis(const Volume<Scalar>& v, int axis, ResampleFactor f) {
  Dims od = v.dims();
  const int in = od[static_cast<std::size_t>(axis)];
  const int out = static_cast<int>(std::lround(in * f.value()));
  od[static_cast<std::size_t>(axis)] = out;
  const AxisTable t = axis_table(in, out, f);
  Volume<Scalar> r(v.channels(), od);
  for (int c = 0; c < v.channels(); ++c) {
    for (int x = 0; x < od[0]; ++x) {
      for (int y = 0; y < od[1]; ++y) {
        for (int z = 0; z < od[2]; ++z) {
          const std::array<int, 3> p{x, y, z};
          const auto i = static_cast<std::size_t>(p[static_cast<std::size_t>(axis)]);
          double acc = 0.0;
          for (std::size_t k = 0; k < 4; ++k) {
            std::array<int, 3> q = p;
            q[static_cast<std::size_t>(axis)] = t.index[i][k];
            acc += t.weight[i][k] * static_cast<double>(v(c, q[0], q[1], q[2]));
          }
          r(c, x, y, z) = static_cast<Scalar>(acc);
        }
      }
    }
  }
  return r;
}

}  // namespace

template <typename Scalar>
Volume<Scalar> tricubic_resample(const Volume<Scalar>& vol, ResampleFactor factor) {
  const bool supported = (factor.numerator == 1 && factor.denominator == 2) ||
                         (factor.numerator == 2 && factor.denominator == 1) ||
                         (factor.numerator == factor.denominator && factor.numerator > 0);
  if (!supported) {
    throw std::invalid_argument("tricubic_resample: unsupported factor " + std::to_string(factor.numerator) +
                                "/" + std::to_string(factor.denominator));
  }
  if (factor.numerator == factor.denominator) return vol;
  for (int d : vol.dims()) {
    if (std::lround(d * factor.value()) < 1) throw ShapeError("tricubic_resample: volume too small");
  }
  return resample_axis(resample_axis(resample_axis(vol, 0, factor), 1, factor), 2, factor);
}

template Volume<float> tricubic_resample(const Volume<float>&, ResampleFactor);
template Volume<double> tricubic_resample(const Volume<double>&, ResampleFactor);

VolumeF make_phantom(const Dims& dims, int n_blobs, std::uint64_t seed) {
  for (int d : dims) {
    if (d < 32) throw ShapeError("make_phantom: every extent must be >= 32, got " + to_string(dims));
  }
  if (n_blobs < 0) throw std::invalid_argument("make_phantom: negative blob count");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double kTwoPi = 6.283185307179586;

  std::vector<double> field(voxel_count(dims));
  auto at = [&](int x, int y, int z) -> double& {
    return field[(static_cast<std::size_t>(x) * dims[1] + y) * dims[2] + z];
  };

  // Blob widths and the dark margin around the object, in voxels. Like air
  // around a scanned body, the field falls to zero at every face.
  constexpr double kSigmaMin = 0.5, kSigmaMax = 1.5, kFade = 8.0;
  const double inset = std::ceil(4.0 * kSigmaMax);
  auto fade = [&](int i, int n) {
    const double t = std::clamp(std::min(i + 0.5, n - i - 0.5) / kFade, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
  };

  // Smooth background: product of one low-frequency cosine per axis plus a ramp.
  std::array<double, 3> freq{}, phase{}, slope{};
  for (int a = 0; a < 3; ++a) {
    freq[a] = (0.5 + unit(rng)) / dims[a];
    phase[a] = kTwoPi * unit(rng);
    slope[a] = (unit(rng) - 0.5) * 0.2 / dims[a];
  }
  for (int x = 0; x < dims[0]; ++x) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int z = 0; z < dims[2]; ++z) {
        at(x, y, z) = 0.2 + 0.1 * std::cos(kTwoPi * freq[0] * x + phase[0]) *
                                std::cos(kTwoPi * freq[1] * y + phase[1]) *
                                std::cos(kTwoPi * freq[2] * z + phase[2]) +
                      slope[0] * x + slope[1] * y + slope[2] * z;
        at(x, y, z) *= fade(x, dims[0]) * fade(y, dims[1]) * fade(z, dims[2]);
      }
    }
  }

  for (int b = 0; b < n_blobs; ++b) {
    Eigen::Vector3d center, sigma;
    for (int a = 0; a < 3; ++a) center[a] = inset + unit(rng) * (dims[a] - 2.0 * inset);
    for (int a = 0; a < 3; ++a) sigma[a] = kSigmaMin + (kSigmaMax - kSigmaMin) * unit(rng);
    Eigen::Quaterniond q(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
    if (q.norm() < 1e-6) q = Eigen::Quaterniond::Identity();
    const Eigen::Matrix3d rot = q.normalized().toRotationMatrix();
    // Precision matrix of the rotated covariance.
    const Eigen::Matrix3d prec = rot * sigma.cwiseInverse().cwiseAbs2().asDiagonal() * rot.transpose();
    const double amp = (unit(rng) < 0.8 ? 1.0 : -0.5) * (0.3 + 0.7 * unit(rng));
    const int reach = static_cast<int>(std::ceil(4.0 * sigma.maxCoeff()));
    Eigen::Array3i lo, hi;
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::floor(center[a])) - reach);
      hi[a] = std::min(dims[a] - 1, static_cast<int>(std::ceil(center[a])) + reach);
    }
    for (int x = lo[0]; x <= hi[0]; ++x) {
      for (int y = lo[1]; y <= hi[1]; ++y) {
        for (int z = lo[2]; z <= hi[2]; ++z) {
          const Eigen::Vector3d d = Eigen::Vector3d(x, y, z) - center;
          at(x, y, z) += amp * std::exp(-0.5 * d.dot(prec * d));
        }
      }
    }
  }

  // Zero stays zero; dark blobs that dip below it are clipped.
  const double span = std::max(*std::max_element(field.begin(), field.end()), 1e-12);
  VolumeF vol(1, dims);
  for (std::size_t i = 0; i < field.size(); ++i) {
    vol.data()[i] = static_cast<float>(std::clamp(255.0 * field[i] / span, 0.0, 255.0));
  }
  return vol;
}

}  // namespace volnet

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "volnet/volume.hpp"

namespace volnet {

enum class VolumeFormat { Nifti1, Raw };
enum class SampleType { Int16, Float32, UInt8 };

std::string_view to_string(SampleType t);
int sample_bytes(SampleType t);

/// On-disk description of a single-channel volume.
struct VolumeFile {
  std::string path;  ///< .nii file, or the .f32raw payload of a raw+sidecar pair
  VolumeFormat format = VolumeFormat::Raw;
  Dims dims{0, 0, 0};
  SampleType dtype = SampleType::Float32;
  double slope = 1.0;
  double intercept = 0.0;
  std::size_t data_offset = 0;
  std::optional<std::array<double, 3>> spacing_mm;
};

/// Distinct failure modes of volume ingestion; every rejection carries one.
enum class VolumeError {
  OpenFailed,
  BadHeaderSize,
  BadMagic,
  BadDims,
  UnsupportedDtype,
  BitpixMismatch,
  BadVoxOffset,
  TruncatedPayload,
  BadSidecar,
  WriteFailed,
  UnsupportedFormat,
};

std::string_view to_string(VolumeError e);

class VolumeIoError : public IoError {
 public:
  VolumeIoError(VolumeError code, const std::string& what)
      : IoError(std::string(to_string(code)) + ": " + what), code_(code) {}
  VolumeError code() const { return code_; }

 private:
  VolumeError code_;
};

/// Parses the header (NIfTI-1) or sidecar (raw) without reading samples.
/// The format is chosen by extension: ".nii" is NIfTI-1, anything else is
/// the raw pair `<name>.f32raw` + `<name>.json`.
VolumeFile probe_volume(const std::string& path);

VolumeF read_volume(const VolumeFile& file);
VolumeF read_volume(const std::string& path);

/// Writes float32 raw+sidecar (the only writable format). `path` may name
/// either file of the pair or the bare stem.
VolumeFile write_volume(const VolumeF& vol, const std::string& path,
                        VolumeFormat format = VolumeFormat::Raw,
                        std::optional<std::array<double, 3>> spacing_mm = std::nullopt);

/// Stem of a raw pair path ("a/b.json" -> "a/b").
std::string raw_stem(const std::string& path);

struct PreprocessSpec {
  std::optional<std::pair<double, double>> hu_clamp;  ///< (lo, hi), lo < hi
  bool normalize = true;                              ///< map clamped range to [0, 255]
};

/// Clamp to hu_clamp, then map it affinely onto [0, 255]. Without a clamp the
/// volume's own [min, max] is mapped.
VolumeF preprocess(const VolumeF& vol, const PreprocessSpec& spec);

/// Keys cubic convolution kernel.
double keys_kernel(double x, double a = -0.5);

/// Weights for taps at floor(u)-1 .. floor(u)+2, phase = u - floor(u).
std::array<double, 4> keys_weights(double phase, double a = -0.5);

struct ResampleFactor {
  int numerator = 1;
  int denominator = 1;
  double value() const { return static_cast<double>(numerator) / denominator; }
};

/// Separable cubic-convolution resampling with clamp-to-edge borders. Sample i
/// of an axis reads source coordinate (i + 0.5) / factor - 0.5. Supported
/// factors: 1/2, 1, 2.
template <typename Scalar>
Volume<Scalar> tricubic_resample(const Volume<Scalar>& vol, ResampleFactor factor);

/// Sum of random rotated anisotropic Gaussian blobs (per-axis sigma in
/// [0.5, 1.5] voxels) on a smooth background that fades to zero over the 8
/// voxels nearest each face. Blob centers keep 6 voxels from the faces. Scaled
/// so the maximum is 255, negatives clipped to 0. Every extent must be >= 32.
VolumeF make_phantom(const Dims& dims, int n_blobs, std::uint64_t seed);

}  // namespace volnet

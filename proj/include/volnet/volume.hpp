#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace volnet {

/// Spatial extent (X, Y, Z) in voxels.
using Dims = std::array<int, 3>;

enum class Axis { X = 0, Y = 1, Z = 2 };

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated serialized weights.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or weight became NaN or infinite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

std::string to_string(const Dims& d);

inline std::size_t voxel_count(const Dims& d) {
  return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
         static_cast<std::size_t>(d[2]);
}

/// Dense rank-4 activation carrier: channels x X x Y x Z.
///
/// Storage is a row-major (channels x voxels) matrix, so each channel is one
/// contiguous row with Z varying fastest. Channel mixing is a plain matrix
/// product on `matrix()`.
template <typename Scalar>
class Volume {
 public:
  using Storage = MatrixRM<Scalar>;

  Volume() = default;
  Volume(int channels, const Dims& dims) : channels_(channels), dims_(dims) {
    if (channels <= 0 || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) {
      throw ShapeError("Volume: non-positive shape " + std::to_string(channels) + "x" +
                       to_string(dims));
    }
    data_ = Storage::Zero(channels, static_cast<Eigen::Index>(voxel_count(dims)));
  }
  Volume(int channels, const Dims& dims, Scalar fill) : Volume(channels, dims) {
    data_.setConstant(fill);
  }

  static Volume zeros_like(const Volume& other) { return Volume(other.channels(), other.dims()); }

  int channels() const { return channels_; }
  const Dims& dims() const { return dims_; }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  std::size_t voxels() const { return voxel_count(dims_); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  bool empty() const { return data_.size() == 0; }

  bool same_shape(const Volume& o) const { return channels_ == o.channels_ && dims_ == o.dims_; }

  std::size_t index(int c, int x, int y, int z) const {
    return ((static_cast<std::size_t>(c) * dims_[0] + x) * dims_[1] + y) * dims_[2] + z;
  }
  Scalar& operator()(int c, int x, int y, int z) { return data_.data()[index(c, x, y, z)]; }
  Scalar operator()(int c, int x, int y, int z) const { return data_.data()[index(c, x, y, z)]; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar* channel_data(int c) { return data_.data() + static_cast<std::size_t>(c) * voxels(); }
  const Scalar* channel_data(int c) const {
    return data_.data() + static_cast<std::size_t>(c) * voxels();
  }

  Storage& matrix() { return data_; }
  const Storage& matrix() const { return data_; }

  auto flat() { return Eigen::Map<VectorX<Scalar>>(data_.data(), data_.size()); }
  auto flat() const { return Eigen::Map<const VectorX<Scalar>>(data_.data(), data_.size()); }

  void set_zero() { data_.setZero(); }

  template <typename Other>
  Volume<Other> cast() const {
    Volume<Other> out(channels_, dims_);
    out.matrix() = data_.template cast<Other>();
    return out;
  }

 private:
  int channels_ = 0;
  Dims dims_{0, 0, 0};
  Storage data_;
};

using VolumeF = Volume<float>;
using VolumeD = Volume<double>;

/// Full (or depthwise) 3D kernel. Weights laid out [t][s][kx][ky][kz]; in
/// depthwise mode `in_channels` is 1 and each output channel reads only its
/// own input channel.
template <typename Scalar>
struct Kernel4 {
  int out_channels = 0;
  int in_channels = 0;
  Dims taps{1, 1, 1};
  bool depthwise = false;
  VectorX<Scalar> weights;

  Kernel4() = default;
  Kernel4(int t, int s, const Dims& k, bool dw = false)
      : out_channels(t), in_channels(dw ? 1 : s), taps(k), depthwise(dw) {
    if (t <= 0 || s <= 0) throw ShapeError("Kernel4: non-positive channel count");
    for (int e : k) {
      if (e <= 0 || e % 2 == 0) throw ShapeError("Kernel4: kernel extents must be odd, got " + to_string(k));
    }
    if (dw && s != t) throw ShapeError("Kernel4: depthwise kernel requires S == T");
    weights = VectorX<Scalar>::Zero(static_cast<Eigen::Index>(out_channels) * in_channels *
                                    k[0] * k[1] * k[2]);
  }

  int tap_count() const { return taps[0] * taps[1] * taps[2]; }
  /// Number of input channels the kernel consumes.
  int input_channels() const { return depthwise ? out_channels : in_channels; }

  Scalar& at(int t, int s, int x, int y, int z) {
    return weights[(((static_cast<Eigen::Index>(t) * in_channels + s) * taps[0] + x) * taps[1] + y) *
                       taps[2] + z];
  }
  Scalar at(int t, int s, int x, int y, int z) const {
    return weights[(((static_cast<Eigen::Index>(t) * in_channels + s) * taps[0] + x) * taps[1] + y) *
                       taps[2] + z];
  }
};

/// 1D taps along one axis. Cross-channel mode sums over every input channel
/// (weights [t][s][k]); depthwise mode filters each channel on its own
/// (weights [t][k], in_channels = 1).
template <typename Scalar>
struct AxisKernel {
  int out_channels = 0;
  int in_channels = 0;
  int taps = 1;
  Axis axis = Axis::X;
  bool depthwise = false;
  VectorX<Scalar> weights;

  AxisKernel() = default;
  AxisKernel(int t, int s, int k, Axis a, bool dw = false)
      : out_channels(t), in_channels(dw ? 1 : s), taps(k), axis(a), depthwise(dw) {
    if (t <= 0 || s <= 0) throw ShapeError("AxisKernel: non-positive channel count");
    if (k <= 0 || k % 2 == 0) throw ShapeError("AxisKernel: tap count must be odd");
    if (dw && s != t) throw ShapeError("AxisKernel: depthwise kernel requires S == T");
    weights = VectorX<Scalar>::Zero(static_cast<Eigen::Index>(out_channels) * in_channels * k);
  }

  int input_channels() const { return depthwise ? out_channels : in_channels; }

  Scalar& at(int t, int s, int k) {
    return weights[(static_cast<Eigen::Index>(t) * in_channels + s) * taps + k];
  }
  Scalar at(int t, int s, int k) const {
    return weights[(static_cast<Eigen::Index>(t) * in_channels + s) * taps + k];
  }

  /// The equivalent full kernel (cross-channel mode only).
  Kernel4<Scalar> embedded() const;
};

/// 1x1x1 channel map, stored row-major as a T x S matrix.
template <typename Scalar>
struct PointwiseKernel {
  int out_channels = 0;
  int in_channels = 0;
  VectorX<Scalar> weights;

  PointwiseKernel() = default;
  PointwiseKernel(int t, int s) : out_channels(t), in_channels(s) {
    if (t <= 0 || s <= 0) throw ShapeError("PointwiseKernel: non-positive channel count");
    weights = VectorX<Scalar>::Zero(static_cast<Eigen::Index>(t) * s);
  }

  auto matrix() { return Eigen::Map<MatrixRM<Scalar>>(weights.data(), out_channels, in_channels); }
  auto matrix() const {
    return Eigen::Map<const MatrixRM<Scalar>>(weights.data(), out_channels, in_channels);
  }
};

template <typename Scalar>
Kernel4<Scalar> AxisKernel<Scalar>::embedded() const {
  if (depthwise) throw ShapeError("AxisKernel::embedded: depthwise kernel has no full embedding");
  Dims k{1, 1, 1};
  k[static_cast<std::size_t>(axis)] = taps;
  Kernel4<Scalar> full(out_channels, in_channels, k);
  for (int t = 0; t < out_channels; ++t) {
    for (int s = 0; s < in_channels; ++s) {
      for (int i = 0; i < taps; ++i) {
        const int x = axis == Axis::X ? i : 0;
        const int y = axis == Axis::Y ? i : 0;
        const int z = axis == Axis::Z ? i : 0;
        full.at(t, s, x, y, z) = at(t, s, i);
      }
    }
  }
  return full;
}

}  // namespace volnet

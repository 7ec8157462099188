#include "volnet/blocks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "binary_io.hpp"

namespace volnet {

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Standard: return "standard";
    case BlockKind::Xception3D: return "xception3d";
    case BlockKind::MobileNetV2_3D: return "mobilenetv2_3d";
    case BlockKind::CPD: return "cpd";
    case BlockKind::LWv1: return "lwv1";
    case BlockKind::LWv2: return "lwv2";
    case BlockKind::Queue: return "queue";
  }
  return "unknown";
}

BlockKind parse_block_kind(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  for (BlockKind k : kAllBlockKinds) {
    if (s == to_string(k)) return k;
  }
  if (s == "xception") return BlockKind::Xception3D;
  if (s == "mobilenetv2" || s == "mobilenet") return BlockKind::MobileNetV2_3D;
  throw std::invalid_argument("unknown block kind '" + std::string(name) + "'");
}

void BlockSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0) throw ShapeError("BlockSpec: channels must be positive");
  for (int t : taps) {
    if (t <= 0 || t % 2 == 0) throw ShapeError("BlockSpec: taps must be odd and positive");
  }
  switch (kind) {
    case BlockKind::Standard:
    case BlockKind::Xception3D:
      return;
    case BlockKind::MobileNetV2_3D:
      // Expansion width, may exceed max(S, T).
      if (bottleneck < 1) throw ShapeError("BlockSpec: expansion width must be positive");
      return;
    default:
      if (bottleneck < 1 || bottleneck > std::max(in_channels, out_channels)) {
        throw ShapeError("BlockSpec: bottleneck R=" + std::to_string(bottleneck) +
                         " outside [1, max(S, T)]");
      }
  }
}

int default_bottleneck(BlockKind kind, int in_channels, int out_channels, double ratio) {
  switch (kind) {
    case BlockKind::Standard:
    case BlockKind::Xception3D:
      return 0;
    case BlockKind::MobileNetV2_3D:
      return 2 * in_channels;
    default:
      return std::max(1, static_cast<int>(std::lround(ratio * out_channels)));
  }
}

BlockSpec make_block_spec(BlockKind kind, int in_channels, int out_channels, double ratio, Dims taps) {
  BlockSpec spec{kind, in_channels, out_channels, default_bottleneck(kind, in_channels, out_channels, ratio),
                 taps};
  spec.validate();
  return spec;
}

template <typename Scalar>
BlockWeights<Scalar> zero_block(const BlockSpec& spec) {
  spec.validate();
  const int S = spec.in_channels, T = spec.out_channels, R = spec.bottleneck;
  const auto [X, Y, Z] = spec.taps;
  BlockWeights<Scalar> w;
  auto& L = w.layers;
  switch (spec.kind) {
    case BlockKind::Standard:
      L.emplace_back(Kernel4<Scalar>(T, S, spec.taps));
      break;
    case BlockKind::CPD:
      L.emplace_back(PointwiseKernel<Scalar>(R, S));
      L.emplace_back(AxisKernel<Scalar>(R, R, X, Axis::X, true));
      L.emplace_back(AxisKernel<Scalar>(R, R, Y, Axis::Y, true));
      L.emplace_back(AxisKernel<Scalar>(R, R, Z, Axis::Z, true));
      L.emplace_back(PointwiseKernel<Scalar>(T, R));
      break;
    case BlockKind::LWv1:
      L.emplace_back(AxisKernel<Scalar>(R, S, X, Axis::X));
      L.emplace_back(AxisKernel<Scalar>(R, R, Y, Axis::Y, true));
      L.emplace_back(AxisKernel<Scalar>(T, R, Z, Axis::Z));
      break;
    case BlockKind::LWv2:
      L.emplace_back(AxisKernel<Scalar>(R, S, X, Axis::X));
      L.emplace_back(AxisKernel<Scalar>(R, R, Y, Axis::Y));
      L.emplace_back(AxisKernel<Scalar>(T, R, Z, Axis::Z));
      break;
    case BlockKind::Queue:
      L.emplace_back(PointwiseKernel<Scalar>(R, S));
      L.emplace_back(AxisKernel<Scalar>(R, R, X, Axis::X));
      L.emplace_back(AxisKernel<Scalar>(R, R, Y, Axis::Y));
      L.emplace_back(AxisKernel<Scalar>(R, R, Z, Axis::Z));
      L.emplace_back(PointwiseKernel<Scalar>(T, R));
      break;
    case BlockKind::Xception3D:
      L.emplace_back(Kernel4<Scalar>(S, S, spec.taps, true));
      L.emplace_back(PointwiseKernel<Scalar>(T, S));
      break;
    case BlockKind::MobileNetV2_3D:
      L.emplace_back(PointwiseKernel<Scalar>(R, S));
      L.emplace_back(Kernel4<Scalar>(R, R, spec.taps, true));
      L.emplace_back(PointwiseKernel<Scalar>(T, R));
      break;
  }
  return w;
}

namespace {

template <typename Scalar>
int fan_in(const Layer<Scalar>& layer) {
  return std::visit(
      [](const auto& k) -> int {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Kernel4<Scalar>>) {
          return k.in_channels * k.tap_count();
        } else if constexpr (std::is_same_v<K, AxisKernel<Scalar>>) {
          return k.in_channels * k.taps;
        } else {
          return k.in_channels;
        }
      },
      layer);
}

template <typename Scalar>
std::string layer_op(const Layer<Scalar>& layer) {
  return std::visit(
      [](const auto& k) -> std::string {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Kernel4<Scalar>>) {
          return k.depthwise ? "depthwise3d" : "conv3d";
        } else if constexpr (std::is_same_v<K, AxisKernel<Scalar>>) {
          return k.depthwise ? "depthwise_axis" : "axis";
        } else {
          return "pointwise";
        }
      },
      layer);
}

// Shape tuple recorded in headers: (T, S_stored, k...) per layer type.
template <typename Scalar>
std::vector<int> layer_shape(const Layer<Scalar>& layer) {
  return std::visit(
      [](const auto& k) -> std::vector<int> {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Kernel4<Scalar>>) {
          return {k.out_channels, k.in_channels, k.taps[0], k.taps[1], k.taps[2]};
        } else if constexpr (std::is_same_v<K, AxisKernel<Scalar>>) {
          return {k.out_channels, k.in_channels, k.taps, static_cast<int>(k.axis)};
        } else {
          return {k.out_channels, k.in_channels};
        }
      },
      layer);
}

}  // namespace

template <typename Scalar>
BlockWeights<Scalar> build_block(const BlockSpec& spec, std::uint64_t seed, Activation act) {
  BlockWeights<Scalar> w = zero_block<Scalar>(spec);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& layer = w.layers[i];
    const bool feeds_relu = i + 1 == w.layers.size() && act == Activation::ReLU;
    const double bound = std::sqrt((feeds_relu ? 6.0 : 3.0) / fan_in(layer));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : layer_weights(layer)) v = static_cast<Scalar>(dist(rng));
  }
  return w;
}

std::int64_t param_count(const BlockSpec& spec) {
  spec.validate();
  const std::int64_t S = spec.in_channels, T = spec.out_channels, R = spec.bottleneck;
  const std::int64_t X = spec.taps[0], Y = spec.taps[1], Z = spec.taps[2];
  switch (spec.kind) {
    case BlockKind::Standard: return X * Y * Z * S * T;
    case BlockKind::CPD: return S * R + (X + Y + Z) * R + R * T;
    case BlockKind::LWv1: return X * S * R + Y * R + Z * R * T;
    case BlockKind::LWv2: return X * S * R + Y * R * R + Z * R * T;
    case BlockKind::Queue: return S * R + (X + Y + Z) * R * R + R * T;
    case BlockKind::Xception3D: return X * Y * Z * S + S * T;
    case BlockKind::MobileNetV2_3D: return S * R + X * Y * Z * R + R * T;
  }
  return 0;
}

Ratio compression_ratio(const BlockSpec& full, const BlockSpec& light) {
  if (full.in_channels != light.in_channels || full.out_channels != light.out_channels ||
      full.taps != light.taps) {
    throw ShapeError("compression_ratio: blocks differ in S, T or taps");
  }
  return Ratio{param_count(full), param_count(light)};
}

template <typename Scalar>
Kernel4<Scalar> compose_rank1_kernel(const MatrixRM<Scalar>& alpha, const MatrixRM<Scalar>& beta,
                                     const MatrixRM<Scalar>& gamma, const MatrixRM<Scalar>& delta) {
  const auto T = alpha.rows();
  if (beta.rows() != T || gamma.rows() != T || delta.rows() != T) {
    throw ShapeError("compose_rank1_kernel: factor row counts differ");
  }
  Kernel4<Scalar> k(static_cast<int>(T), static_cast<int>(delta.cols()),
                    Dims{static_cast<int>(alpha.cols()), static_cast<int>(beta.cols()),
                         static_cast<int>(gamma.cols())});
  for (int t = 0; t < k.out_channels; ++t) {
    for (int s = 0; s < k.in_channels; ++s) {
      for (int x = 0; x < k.taps[0]; ++x) {
        for (int y = 0; y < k.taps[1]; ++y) {
          for (int z = 0; z < k.taps[2]; ++z) {
            k.at(t, s, x, y, z) = alpha(t, x) * beta(t, y) * gamma(t, z) * delta(t, s);
          }
        }
      }
    }
  }
  return k;
}

template <typename Scalar>
void check_block_weights(const BlockSpec& spec, const BlockWeights<Scalar>& weights) {
  const BlockWeights<Scalar> ref = zero_block<Scalar>(spec);
  if (ref.layers.size() != weights.layers.size()) {
    throw ShapeError("block weights: expected " + std::to_string(ref.layers.size()) + " layers for " +
                     std::string(to_string(spec.kind)));
  }
  for (std::size_t i = 0; i < ref.layers.size(); ++i) {
    if (ref.layers[i].index() != weights.layers[i].index() ||
        layer_op(ref.layers[i]) != layer_op(weights.layers[i]) ||
        layer_shape(ref.layers[i]) != layer_shape(weights.layers[i]) ||
        layer_weights(ref.layers[i]).size() != layer_weights(weights.layers[i]).size()) {
      throw ShapeError("block weights: layer " + std::to_string(i) + " shape mismatch");
    }
  }
}

namespace {

nlohmann::json block_header(const BlockSpec& spec, const BlockWeights<float>& weights) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : weights.layers) {
    layers.push_back({{"op", layer_op(l)}, {"shape", layer_shape(l)}});
  }
  return {{"kind", std::string(to_string(spec.kind))},
          {"in_channels", spec.in_channels},
          {"out_channels", spec.out_channels},
          {"bottleneck", spec.bottleneck},
          {"taps", {spec.taps[0], spec.taps[1], spec.taps[2]}},
          {"layers", layers}};
}

constexpr char kBlockMagic[9] = "VNBLK001";

}  // namespace

void write_block(std::ostream& out, const BlockSpec& spec, const BlockWeights<float>& weights) {
  check_block_weights(spec, weights);
  detail::write_framed_header(out, kBlockMagic, block_header(spec, weights));
  for (const auto& l : weights.layers) {
    const auto& w = layer_weights(l);
    detail::write_f32(out, w.data(), static_cast<std::size_t>(w.size()));
  }
  if (!out) throw detail::FormatError("write_block: stream write failed");
}

std::pair<BlockSpec, BlockWeights<float>> read_block(std::istream& in) {
  const nlohmann::json h = detail::read_framed_header(in, kBlockMagic);
  BlockSpec spec;
  try {
    spec.kind = parse_block_kind(h.at("kind").get<std::string>());
    spec.in_channels = h.at("in_channels").get<int>();
    spec.out_channels = h.at("out_channels").get<int>();
    spec.bottleneck = h.at("bottleneck").get<int>();
    const auto taps = h.at("taps").get<std::vector<int>>();
    if (taps.size() != 3) throw detail::FormatError("block header: taps must have 3 entries");
    spec.taps = {taps[0], taps[1], taps[2]};
    spec.validate();
  } catch (const nlohmann::json::exception& e) {
    throw detail::FormatError(std::string("block header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw detail::FormatError(std::string("block header: ") + e.what());
  }
  BlockWeights<float> w = zero_block<float>(spec);
  if (h.at("layers") != block_header(spec, w).at("layers")) {
    throw detail::FormatError("block header: layer list does not match block kind");
  }
  for (auto& l : w.layers) {
    auto& v = layer_weights(l);
    detail::read_f32(in, v.data(), static_cast<std::size_t>(v.size()));
  }
  return {spec, std::move(w)};
}

#define VOLNET_INSTANTIATE_BLOCKS(S)                                                           \
  template BlockWeights<S> zero_block<S>(const BlockSpec&);                                   \
  template BlockWeights<S> build_block<S>(const BlockSpec&, std::uint64_t, Activation);                   \
  template Kernel4<S> compose_rank1_kernel(const MatrixRM<S>&, const MatrixRM<S>&,            \
                                           const MatrixRM<S>&, const MatrixRM<S>&);           \
  template void check_block_weights(const BlockSpec&, const BlockWeights<S>&);

VOLNET_INSTANTIATE_BLOCKS(float)
VOLNET_INSTANTIATE_BLOCKS(double)

}  // namespace volnet

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "volnet/autodiff.hpp"
#include "volnet/volume.hpp"

namespace volnet {

enum class BlockKind { Standard, Xception3D, MobileNetV2_3D, CPD, LWv1, LWv2, Queue };

inline constexpr BlockKind kAllBlockKinds[] = {BlockKind::Standard, BlockKind::Xception3D,
                                               BlockKind::MobileNetV2_3D, BlockKind::CPD,
                                               BlockKind::LWv1, BlockKind::LWv2, BlockKind::Queue};

std::string_view to_string(BlockKind kind);
/// Accepts the canonical lower-case names plus a few aliases ("mobilenetv2", "xception").
BlockKind parse_block_kind(std::string_view name);

enum class Activation { None, ReLU };

/// Declarative description of one convolution block.
///
/// `bottleneck` is the inner width R. For MobileNetV2_3D it is the expansion
/// width; it is ignored by Standard and Xception3D.
struct BlockSpec {
  BlockKind kind = BlockKind::Standard;
  int in_channels = 1;
  int out_channels = 1;
  int bottleneck = 0;
  Dims taps{3, 3, 3};

  /// Throws ShapeError on an invalid spec.
  void validate() const;
  bool operator==(const BlockSpec&) const = default;
};

/// Inner width for `kind` when the bottleneck is derived from a channel
/// compression ratio: round(ratio * T) (at least 1), or 2S for MobileNetV2_3D.
int default_bottleneck(BlockKind kind, int in_channels, int out_channels, double ratio = 0.5);

BlockSpec make_block_spec(BlockKind kind, int in_channels, int out_channels, double ratio = 0.5,
                          Dims taps = {3, 3, 3});

template <typename Scalar>
using Layer = std::variant<Kernel4<Scalar>, AxisKernel<Scalar>, PointwiseKernel<Scalar>>;

template <typename Scalar>
VectorX<Scalar>& layer_weights(Layer<Scalar>& layer) {
  return std::visit([](auto& k) -> VectorX<Scalar>& { return k.weights; }, layer);
}
template <typename Scalar>
const VectorX<Scalar>& layer_weights(const Layer<Scalar>& layer) {
  return std::visit([](const auto& k) -> const VectorX<Scalar>& { return k.weights; }, layer);
}

template <typename Scalar>
struct BlockWeights {
  std::vector<Layer<Scalar>> layers;

  std::int64_t element_count() const {
    std::int64_t n = 0;
    for (const auto& l : layers) n += layer_weights(l).size();
    return n;
  }
};

/// Layer shapes for `spec` with all weights zero.
template <typename Scalar>
BlockWeights<Scalar> zero_block(const BlockSpec& spec);

/// Layer shapes for `spec`, weights uniform in [-b, b] with b = sqrt(g / fan_in):
/// g = 6 for a layer feeding a ReLU, g = 3 for a layer feeding another linear
/// layer (or the output of an Activation::None block).
template <typename Scalar>
BlockWeights<Scalar> build_block(const BlockSpec& spec, std::uint64_t seed, Activation act = Activation::ReLU);

/// Closed-form weight count of a block.
std::int64_t param_count(const BlockSpec& spec);

struct Ratio {
  std::int64_t numerator = 1;
  std::int64_t denominator = 1;
  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
};

/// param_count(full) / param_count(light).
Ratio compression_ratio(const BlockSpec& full, const BlockSpec& light);

/// W_t(x, y, z, s) = alpha(t, x) * beta(t, y) * gamma(t, z) * delta(t, s).
template <typename Scalar>
Kernel4<Scalar> compose_rank1_kernel(const MatrixRM<Scalar>& alpha, const MatrixRM<Scalar>& beta,
                                     const MatrixRM<Scalar>& gamma, const MatrixRM<Scalar>& delta);

/// Runs the block's layer sequence through `ex`. One activation at the output;
/// the MobileNetV2_3D identity shortcut (S == T) is added before it.
template <typename Exec, typename Scalar>
typename Exec::Value apply_block(Exec& ex, const BlockSpec& spec, const BlockWeights<Scalar>& w,
                                 const typename Exec::Value& x, Activation act = Activation::ReLU) {
  using Value = typename Exec::Value;
  if (w.layers.empty()) throw ShapeError("apply_block: block has no layers");
  auto run = [&ex](const Layer<Scalar>& layer, const Value& in) -> Value {
    return std::visit(
        [&](const auto& k) -> Value {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Kernel4<Scalar>>) {
            return ex.conv3d_full(in, k);
          } else if constexpr (std::is_same_v<K, AxisKernel<Scalar>>) {
            return ex.conv_axis(in, k);
          } else {
            return ex.pointwise(in, k);
          }
        },
        layer);
  };
  Value h = run(w.layers.front(), x);
  for (std::size_t i = 1; i < w.layers.size(); ++i) h = run(w.layers[i], h);
  if (spec.kind == BlockKind::MobileNetV2_3D && spec.in_channels == spec.out_channels) {
    h = ex.add(h, x);
  }
  return act == Activation::ReLU ? ex.relu(h) : h;
}

template <typename Scalar>
Volume<Scalar> forward_block(const BlockSpec& spec, const BlockWeights<Scalar>& weights,
                             const Volume<Scalar>& input, Activation act = Activation::ReLU) {
  if (input.channels() != spec.in_channels) {
    throw ShapeError("forward_block: input has " + std::to_string(input.channels()) +
                     " channels, block expects " + std::to_string(spec.in_channels));
  }
  Eval<Scalar> ex;
  return apply_block(ex, spec, weights, input, act);
}

/// Throws ShapeError unless `weights` has exactly the layer shapes of `spec`.
template <typename Scalar>
void check_block_weights(const BlockSpec& spec, const BlockWeights<Scalar>& weights);

// Serialization: "VNBLK001", u32 header length, JSON header, then each
// layer's weights as little-endian float32.

void write_block(std::ostream& out, const BlockSpec& spec, const BlockWeights<float>& weights);
std::pair<BlockSpec, BlockWeights<float>> read_block(std::istream& in);

}  // namespace volnet

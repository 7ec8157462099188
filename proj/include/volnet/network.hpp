#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volnet/blocks.hpp"

namespace volnet {

/// Architecture hyperparameters shared by ParallelNet and VolumeNet.
struct NetConfig {
  int depth = 5;           ///< D: layers in the mainline.
  int channels = 32;       ///< C = K: channels per layer past the first.
  int scale = 2;           ///< r: voxel-shuffle factor; first-layer width is r^3.
  BlockKind kind = BlockKind::Standard;  ///< Block used for replaceable layers.
  double ratio = 0.5;      ///< Bottleneck R = ratio * T for factorized blocks.
  int head_taps = 3;       ///< Cubic kernel extent of the aggregation heads (1 or 3).
  bool global_residual = true;

  int first_channels() const { return scale * scale * scale; }
  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

/// One convolution stage of the layer graph.
template <typename Scalar>
struct Stage {
  std::string name;
  BlockSpec spec;
  BlockWeights<Scalar> weights;
  Activation activation = Activation::ReLU;
};

template <typename Scalar>
struct Branch {
  std::optional<Stage<Scalar>> head;  ///< Aggregation head; absent on the mainline.
  std::vector<Stage<Scalar>> layers;  ///< Mapping layers.
};

/// Explicit layer graph:
///   F0 = extraction(in)
///   branch 1 (mainline): D layers, the first 8 -> K
///   branch i >= 2: head over [F(1,i-1), ..., F(i-1,1)], then D-i+1 layers
///   out = shuffle(F0 + fusion([F(1,D), F(2,D-1), ..., F(D,1)]))
template <typename Scalar>
struct Network {
  NetConfig config;
  Stage<Scalar> extraction;
  std::vector<Branch<Scalar>> branches;
  Stage<Scalar> fusion;

  /// Stages in canonical order: extraction, then per branch its head and
  /// layers, then fusion. This is also the serialization order.
  std::vector<Stage<Scalar>*> stages();
  std::vector<const Stage<Scalar>*> stages() const;

  /// Weight vectors of every stage in canonical order.
  std::vector<VectorX<Scalar>*> parameters();
};

/// ParallelNet: every stage a standard convolution. Requires kind == Standard.
template <typename Scalar>
Network<Scalar> build_parallelnet(const NetConfig& cfg, std::uint64_t seed);

/// VolumeNet: ParallelNet topology with the interior convolutions (mainline
/// layers 2..D, branch mapping layers, fusion, and the aggregation heads when
/// they are cubic) replaced by `cfg.kind`. Extraction, mainline layer 1 and
/// pointwise heads stay standard.
template <typename Scalar>
Network<Scalar> build_volumenet(const NetConfig& cfg, std::uint64_t seed);

/// Dispatches on cfg.kind (Standard -> ParallelNet).
template <typename Scalar>
Network<Scalar> build_network(const NetConfig& cfg, std::uint64_t seed);

template <typename Scalar>
Network<Scalar> zero_network(const NetConfig& cfg);

template <typename Exec, typename Scalar>
typename Exec::Value apply_network(Exec& ex, const Network<Scalar>& net, const typename Exec::Value& input) {
  using Value = typename Exec::Value;
  const int D = net.config.depth;
  auto run = [&ex](const Stage<Scalar>& st, const Value& x) {
    return apply_block(ex, st.spec, st.weights, x, st.activation);
  };
  const Value f0 = run(net.extraction, input);
  // feats[i][j] = F(i+1, j+1)
  std::vector<std::vector<Value>> feats(static_cast<std::size_t>(D));
  for (int i = 0; i < D; ++i) {
    const Branch<Scalar>& br = net.branches[static_cast<std::size_t>(i)];
    auto& out = feats[static_cast<std::size_t>(i)];
    Value h;
    if (i == 0) {
      h = f0;
    } else {
      std::vector<const Value*> parts;
      for (int k = 0; k < i; ++k) {
        parts.push_back(&feats[static_cast<std::size_t>(k)][static_cast<std::size_t>(i - k - 1)]);
      }
      h = run(*br.head, ex.concat(parts));
    }
    for (const auto& layer : br.layers) {
      h = run(layer, h);
      out.push_back(h);
    }
  }
  std::vector<const Value*> tails;
  for (int i = 0; i < D; ++i) tails.push_back(&feats[static_cast<std::size_t>(i)].back());
  Value fused = run(net.fusion, ex.concat(tails));
  if (net.config.global_residual) fused = ex.add(f0, fused);
  return ex.voxel_shuffle(fused, net.config.scale);
}

/// Whole-volume inference. Output is 1 channel at r times the input dims.
template <typename Scalar>
Volume<Scalar> forward(const Network<Scalar>& net, const Volume<Scalar>& input);

/// Per-axis receptive-field radius of one output voxel, in input voxels.
template <typename Scalar>
Dims receptive_radius(const Network<Scalar>& net);

/// Patch-wise inference: cores of `tile` input voxels per axis, each run with
/// `margin` context voxels and center-cropped. Equals `forward` whenever the
/// margin covers the receptive radius. Tiles fan out to `workers` threads.
template <typename Scalar>
Volume<Scalar> forward_tiled(const Network<Scalar>& net, const Volume<Scalar>& input, int tile,
                             int margin, int workers = 1);

struct StageCount {
  std::string name;
  std::int64_t params = 0;
};

struct ParamReport {
  std::int64_t total = 0;
  std::vector<StageCount> breakdown;  ///< extraction, branch_1..branch_D, fusion
};

template <typename Scalar>
ParamReport param_count_network(const Network<Scalar>& net);

/// Closed-form count from the configuration alone.
ParamReport param_count_network(const NetConfig& cfg);

std::string network_name(const NetConfig& cfg);

// Serialization: "VNNET001", u32 header length, JSON header (config + stage
// list), then one block stream per stage in canonical order.

void write_network(std::ostream& out, const Network<float>& net);
Network<float> read_network(std::istream& in);
void save_network(const std::string& path, const Network<float>& net);
Network<float> load_network(const std::string& path);

nlohmann::json config_to_json(const NetConfig& cfg);
/// Throws std::invalid_argument on missing keys or an invalid configuration.
NetConfig config_from_json(const nlohmann::json& j);

}  // namespace volnet

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "reference.hpp"
#include "volnet/blocks.hpp"

using namespace volnet;
using volnet::testing::central_difference;
using volnet::testing::dot;
using volnet::testing::max_abs;
using volnet::testing::max_abs_diff;
using volnet::testing::random_volume;
using volnet::testing::randomize;
using volnet::testing::rel_err;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(77);
  return r;
}

// Layer widths as (in, out) pairs.
std::vector<std::pair<int, int>> widths(const BlockWeights<float>& w) {
  std::vector<std::pair<int, int>> out;
  for (const auto& l : w.layers) {
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, PointwiseKernel<float>>) {
            out.emplace_back(k.in_channels, k.out_channels);
          } else {
            out.emplace_back(k.input_channels(), k.out_channels);
          }
        },
        l);
  }
  return out;
}

}  // namespace

TEST(BuildBlock, QueueLayerWidths) {
  const BlockSpec spec = make_block_spec(BlockKind::Queue, 32, 32, 0.5);
  EXPECT_EQ(spec.bottleneck, 16);
  const auto w = build_block<float>(spec, 1);
  const std::vector<std::pair<int, int>> expected{{32, 16}, {16, 16}, {16, 16}, {16, 16}, {16, 32}};
  EXPECT_EQ(widths(w), expected);
  ASSERT_TRUE(std::holds_alternative<AxisKernel<float>>(w.layers[1]));
  EXPECT_EQ(std::get<AxisKernel<float>>(w.layers[1]).axis, Axis::X);
  EXPECT_EQ(std::get<AxisKernel<float>>(w.layers[2]).axis, Axis::Y);
  EXPECT_EQ(std::get<AxisKernel<float>>(w.layers[3]).axis, Axis::Z);
  EXPECT_FALSE(std::get<AxisKernel<float>>(w.layers[2]).depthwise);
}

TEST(BuildBlock, LayerSequences) {
  auto seq = [](BlockKind k) { return widths(build_block<float>(make_block_spec(k, 8, 12, 0.5), 3)); };
  using W = std::vector<std::pair<int, int>>;
  EXPECT_EQ(seq(BlockKind::Standard), (W{{8, 12}}));
  EXPECT_EQ(seq(BlockKind::CPD), (W{{8, 6}, {6, 6}, {6, 6}, {6, 6}, {6, 12}}));
  EXPECT_EQ(seq(BlockKind::LWv1), (W{{8, 6}, {6, 6}, {6, 12}}));
  EXPECT_EQ(seq(BlockKind::LWv2), (W{{8, 6}, {6, 6}, {6, 12}}));
  EXPECT_EQ(seq(BlockKind::Xception3D), (W{{8, 8}, {8, 12}}));
  EXPECT_EQ(seq(BlockKind::MobileNetV2_3D), (W{{8, 16}, {16, 16}, {16, 12}}));

  const auto cpd = build_block<float>(make_block_spec(BlockKind::CPD, 8, 12, 0.5), 3);
  for (int i = 1; i <= 3; ++i) EXPECT_TRUE(std::get<AxisKernel<float>>(cpd.layers[static_cast<std::size_t>(i)]).depthwise);
  const auto lw1 = build_block<float>(make_block_spec(BlockKind::LWv1, 8, 12, 0.5), 3);
  EXPECT_FALSE(std::get<AxisKernel<float>>(lw1.layers[0]).depthwise);
  EXPECT_TRUE(std::get<AxisKernel<float>>(lw1.layers[1]).depthwise);
  EXPECT_FALSE(std::get<AxisKernel<float>>(lw1.layers[2]).depthwise);
  const auto xc = build_block<float>(make_block_spec(BlockKind::Xception3D, 8, 12), 3);
  EXPECT_TRUE(std::get<Kernel4<float>>(xc.layers[0]).depthwise);
}

TEST(BuildBlock, StandardShapeAndRankOneCpd) {
  const auto w = build_block<float>(make_block_spec(BlockKind::Standard, 1, 8), 5);
  const auto& k = std::get<Kernel4<float>>(w.layers[0]);
  EXPECT_EQ(k.out_channels, 8);
  EXPECT_EQ(k.in_channels, 1);
  EXPECT_EQ(k.taps, (Dims{3, 3, 3}));
  BlockSpec cpd{BlockKind::CPD, 4, 4, 1};
  const auto c = build_block<float>(cpd, 5);
  EXPECT_EQ(widths(c), (std::vector<std::pair<int, int>>{{4, 1}, {1, 1}, {1, 1}, {1, 1}, {1, 4}}));
}

TEST(BuildBlock, HeUniformBoundsAndDeterminism) {
  const BlockSpec spec = make_block_spec(BlockKind::Queue, 16, 16, 0.5);
  const auto a = build_block<double>(spec, 9);
  const auto b = build_block<double>(spec, 9);
  const auto c = build_block<double>(spec, 10);
  for (std::size_t i = 0; i < a.layers.size(); ++i) EXPECT_EQ(layer_weights(a.layers[i]), layer_weights(b.layers[i]));
  EXPECT_NE(layer_weights(a.layers[0]), layer_weights(c.layers[0]));
  // Inner factors: sqrt(3 / fan_in); the layer feeding the ReLU: sqrt(6 / fan_in).
  EXPECT_LE(layer_weights(a.layers[0]).cwiseAbs().maxCoeff(), std::sqrt(3.0 / 16));
  EXPECT_LE(layer_weights(a.layers[1]).cwiseAbs().maxCoeff(), std::sqrt(3.0 / 24));
  EXPECT_LE(layer_weights(a.layers[4]).cwiseAbs().maxCoeff(), std::sqrt(6.0 / 8));
  EXPECT_GT(layer_weights(a.layers[4]).cwiseAbs().maxCoeff(), std::sqrt(3.0 / 8));
  const auto lin = build_block<double>(spec, 9, Activation::None);
  EXPECT_LE(layer_weights(lin.layers[4]).cwiseAbs().maxCoeff(), std::sqrt(3.0 / 8));
}

TEST(BlockSpec, Validation) {
  EXPECT_THROW(make_block_spec(BlockKind::Queue, 8, 8, 0.5, Dims{3, 2, 3}), ShapeError);
  BlockSpec bad{BlockKind::CPD, 8, 8, 9};
  EXPECT_THROW(bad.validate(), ShapeError);
  BlockSpec zero{BlockKind::LWv2, 8, 8, 0};
  EXPECT_THROW(build_block<float>(zero, 1), ShapeError);
  BlockSpec mb{BlockKind::MobileNetV2_3D, 8, 8, 16};
  EXPECT_NO_THROW(mb.validate());
  EXPECT_EQ(parse_block_kind("Queue"), BlockKind::Queue);
  EXPECT_EQ(parse_block_kind("xception"), BlockKind::Xception3D);
  EXPECT_THROW(parse_block_kind("resnet"), std::invalid_argument);
}

TEST(ParamCount, SpotValues) {
  EXPECT_EQ(param_count(make_block_spec(BlockKind::Standard, 32, 32)), 27648);
  EXPECT_EQ(param_count(make_block_spec(BlockKind::Queue, 32, 32, 0.5)), 3328);
  EXPECT_EQ(param_count(make_block_spec(BlockKind::CPD, 32, 32, 0.5)), 1168);
}

TEST(ParamCount, FormulasAndStoredElementsOverGrid) {
  for (int S : {4, 8, 16, 32}) {
    for (int T : {4, 8, 16, 32}) {
      for (int R = 2; R <= T; ++R) {
        const std::int64_t s = S, t = T, r = R;
        const std::pair<BlockKind, std::int64_t> cases[] = {
            {BlockKind::Standard, 27 * s * t},
            {BlockKind::CPD, s * r + 9 * r + r * t},
            {BlockKind::LWv1, 3 * s * r + 3 * r + 3 * r * t},
            {BlockKind::LWv2, 3 * s * r + 3 * r * r + 3 * r * t},
            {BlockKind::Queue, s * r + 9 * r * r + r * t},
            {BlockKind::Xception3D, 27 * s + s * t},
            {BlockKind::MobileNetV2_3D, s * r + 27 * r + r * t},
        };
        for (const auto& [kind, expected] : cases) {
          if (R > std::max(S, T) && kind != BlockKind::MobileNetV2_3D) continue;
          const BlockSpec spec{kind, S, T, R};
          ASSERT_EQ(param_count(spec), expected) << to_string(kind) << " S=" << S << " T=" << T << " R=" << R;
          ASSERT_EQ(zero_block<float>(spec).element_count(), expected) << to_string(kind);
        }
      }
    }
  }
}

TEST(ParamCount, OrderingAtHalfBottleneck) {
  for (int T : {4, 8, 16, 32}) {
    auto count = [&](BlockKind k) { return param_count(make_block_spec(k, T, T, 0.5)); };
    EXPECT_LT(count(BlockKind::CPD), count(BlockKind::Queue));
    EXPECT_LT(count(BlockKind::Queue), count(BlockKind::Standard));
    EXPECT_LT(count(BlockKind::LWv1), count(BlockKind::LWv2));
    EXPECT_LT(count(BlockKind::LWv2), count(BlockKind::Standard));
  }
}

TEST(CompressionRatio, HandValues) {
  const auto full = make_block_spec(BlockKind::Standard, 32, 32);
  EXPECT_NEAR(compression_ratio(full, make_block_spec(BlockKind::Queue, 32, 32, 0.5)).value(), 8.3077, 1e-4);
  EXPECT_NEAR(compression_ratio(full, make_block_spec(BlockKind::CPD, 32, 32, 0.5)).value(), 23.671, 1e-3);
  const Ratio same = compression_ratio(full, full);
  EXPECT_EQ(same.numerator, same.denominator);
  EXPECT_THROW(compression_ratio(full, make_block_spec(BlockKind::Queue, 16, 32)), ShapeError);
}

TEST(ComposeRank1, Cases) {
  MatrixRM<double> ones = MatrixRM<double>::Ones(2, 3);
  const auto k = compose_rank1_kernel<double>(ones, ones, ones, MatrixRM<double>::Ones(2, 4));
  EXPECT_EQ(k.weights, VectorX<double>::Ones(k.weights.size()));

  MatrixRM<double> delta = MatrixRM<double>::Zero(2, 3);
  delta.col(1).setOnes();
  MatrixRM<double> mix(2, 4);
  mix << 1, 2, 3, 4, 5, 6, 7, 8;
  const auto pw = compose_rank1_kernel<double>(delta, delta, delta, mix);
  for (int t = 0; t < 2; ++t)
    for (int s = 0; s < 4; ++s) {
      EXPECT_EQ(pw.at(t, s, 1, 1, 1), mix(t, s));
      EXPECT_EQ(pw.at(t, s, 0, 1, 1), 0.0);
    }
}

namespace {

// CPD weights realizing W_t(x, y, z, s) = alpha(t,x) beta(t,y) gamma(t,z) delta(t,s)
// for T output channels: R = T middle channels, first pointwise = delta,
// depthwise axes = alpha/beta/gamma, last pointwise = identity.
BlockWeights<double> cpd_from_factors(const MatrixRM<double>& a, const MatrixRM<double>& b, const MatrixRM<double>& g,
                                      const MatrixRM<double>& d) {
  const int T = static_cast<int>(a.rows()), S = static_cast<int>(d.cols());
  BlockWeights<double> w = zero_block<double>(BlockSpec{BlockKind::CPD, S, T, T});
  std::get<PointwiseKernel<double>>(w.layers[0]).matrix() = d;
  const MatrixRM<double>* f[3] = {&a, &b, &g};
  for (int ax = 0; ax < 3; ++ax) {
    auto& k = std::get<AxisKernel<double>>(w.layers[static_cast<std::size_t>(ax + 1)]);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < 3; ++i) k.at(t, 0, i) = (*f[ax])(t, i);
  }
  std::get<PointwiseKernel<double>>(w.layers[4]).matrix().setIdentity();
  return w;
}

}  // namespace

TEST(ForwardBlock, CpdEqualsComposedRank1Kernel) {
  for (int trial = 0; trial < 5; ++trial) {
    const int S = 1 + trial * 3, T = 2 + trial * 2;
    MatrixRM<double> a = MatrixRM<double>::Random(T, 3), b = MatrixRM<double>::Random(T, 3),
                     g = MatrixRM<double>::Random(T, 3), d = MatrixRM<double>::Random(T, S);
    const auto w = cpd_from_factors(a, b, g, d);
    const auto in = random_volume<double>(S, Dims{5, 6, 4}, rng());
    const auto got = forward_block(BlockSpec{BlockKind::CPD, S, T, T}, w, in, Activation::None);
    const auto ref = volnet::testing::naive_conv3d(in, compose_rank1_kernel(a, b, g, d));
    EXPECT_LT(max_abs_diff(got, ref), 1e-8 * max_abs(ref));
  }
}

TEST(ForwardBlock, StandardIdentityIsRelu) {
  BlockSpec spec = make_block_spec(BlockKind::Standard, 2, 2, 0.5, Dims{1, 1, 1});
  auto w = zero_block<float>(spec);
  auto& k = std::get<Kernel4<float>>(w.layers[0]);
  k.at(0, 0, 0, 0, 0) = 1.0f;
  k.at(1, 1, 0, 0, 0) = 1.0f;
  const auto in = random_volume<float>(2, Dims{3, 3, 3}, rng());
  EXPECT_EQ(max_abs_diff(forward_block(spec, w, in), relu(in)), 0.0);
}

TEST(ForwardBlock, QueueWithDeltaTapsIsTwoPointwiseMaps) {
  const BlockSpec spec = make_block_spec(BlockKind::Queue, 6, 5, 0.5);
  auto w = build_block<double>(spec, 4);
  for (int i = 1; i <= 3; ++i) {
    auto& k = std::get<AxisKernel<double>>(w.layers[static_cast<std::size_t>(i)]);
    k.weights.setZero();
    for (int t = 0; t < k.out_channels; ++t) k.at(t, t, 1) = 1.0;
  }
  const auto in = random_volume<double>(6, Dims{4, 3, 5}, rng());
  const auto& p0 = std::get<PointwiseKernel<double>>(w.layers[0]);
  const auto& p1 = std::get<PointwiseKernel<double>>(w.layers[4]);
  const auto ref = volnet::testing::naive_pointwise(volnet::testing::naive_pointwise(in, p0), p1);
  EXPECT_LT(max_abs_diff(forward_block(spec, w, in, Activation::None), ref), 1e-12);
}

TEST(ForwardBlock, MobileNetResidualBeforeActivation) {
  const BlockSpec same = make_block_spec(BlockKind::MobileNetV2_3D, 4, 4);
  const auto zero = zero_block<double>(same);
  const auto in = random_volume<double>(4, Dims{3, 3, 3}, rng());
  EXPECT_EQ(max_abs_diff(forward_block(same, zero, in, Activation::None), in), 0.0);
  EXPECT_EQ(max_abs_diff(forward_block(same, zero, in), relu(in)), 0.0);
  const BlockSpec wider = make_block_spec(BlockKind::MobileNetV2_3D, 4, 6);
  EXPECT_EQ(max_abs(forward_block(wider, zero_block<double>(wider), in, Activation::None)), 0.0);
}

TEST(ForwardBlock, ShapesAndErrors) {
  for (BlockKind k : kAllBlockKinds) {
    const BlockSpec spec = make_block_spec(k, 6, 10, 0.5);
    const auto out = forward_block(spec, build_block<float>(spec, 2), random_volume<float>(6, Dims{4, 5, 3}, rng()));
    EXPECT_EQ(out.channels(), 10) << to_string(k);
    EXPECT_EQ(out.dims(), (Dims{4, 5, 3})) << to_string(k);
    EXPECT_GE(out.matrix().minCoeff(), 0.0f);
    EXPECT_THROW(forward_block(spec, build_block<float>(spec, 2), VolumeF(5, Dims{4, 4, 4})), ShapeError);
  }
}

TEST(BlockGradients, FiniteDifferencesEveryKind) {
  for (BlockKind kind : kAllBlockKinds) {
    const BlockSpec spec = make_block_spec(kind, 3, 4, 0.5);
    auto w = build_block<double>(spec, 11);
    auto x = random_volume<double>(3, Dims{4, 3, 5}, rng());
    const auto proj = random_volume<double>(4, Dims{4, 3, 5}, rng());
    auto objective = [&] { return dot(forward_block(spec, w, x), proj); };

    std::vector<VectorX<double>> grads;
    for (const auto& l : w.layers) grads.push_back(VectorX<double>::Zero(layer_weights(l).size()));
    Tape<double> tape;
    for (std::size_t i = 0; i < w.layers.size(); ++i) tape.bind_gradient(layer_weights(w.layers[i]), grads[i]);
    const int in = tape.input(x);
    const int out = apply_block(tape, spec, w, in);
    tape.backward(out, proj);

    for (int probe = 0; probe < 10; ++probe) {
      const std::size_t li = std::uniform_int_distribution<std::size_t>(0, w.layers.size() - 1)(rng());
      auto& wv = layer_weights(w.layers[li]);
      const Eigen::Index j = std::uniform_int_distribution<Eigen::Index>(0, wv.size() - 1)(rng());
      EXPECT_LT(rel_err(central_difference(objective, wv[j]), grads[li][j]), 1e-4)
          << to_string(kind) << " layer " << li << " weight " << j;
      const std::size_t xi = std::uniform_int_distribution<std::size_t>(0, x.size() - 1)(rng());
      EXPECT_LT(rel_err(central_difference(objective, x.data()[xi]), tape.grad(in).data()[xi]), 1e-4)
          << to_string(kind) << " input " << xi;
    }
  }
}

TEST(BlockSerialization, BitExactRoundTrip) {
  for (BlockKind k : kAllBlockKinds) {
    const BlockSpec spec = make_block_spec(k, 5, 7, 0.5);
    const auto w = build_block<float>(spec, 3);
    std::stringstream buf;
    write_block(buf, spec, w);
    const auto [spec2, w2] = read_block(buf);
    EXPECT_EQ(spec2, spec);
    ASSERT_EQ(w2.layers.size(), w.layers.size());
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
      EXPECT_EQ(layer_weights(w2.layers[i]), layer_weights(w.layers[i]));
      EXPECT_EQ(w2.layers[i].index(), w.layers[i].index());
    }
  }
}

TEST(BlockSerialization, RejectsCorruption) {
  const BlockSpec spec = make_block_spec(BlockKind::Queue, 4, 4);
  std::stringstream buf;
  write_block(buf, spec, build_block<float>(spec, 1));
  std::string bytes = buf.str();
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream s1(bad_magic);
  EXPECT_THROW(read_block(s1), FormatError);
  std::stringstream s2(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_block(s2), FormatError);
}

#include "volnet/network.hpp"

#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "volnet/parallel.hpp"

namespace volnet {

void NetConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("NetConfig: depth must be >= 2");
  if (channels < 1) throw std::invalid_argument("NetConfig: channels must be positive");
  if (scale < 1) throw std::invalid_argument("NetConfig: scale must be positive");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("NetConfig: ratio must be in (0, 1]");
  if (head_taps != 1 && head_taps != 3) throw std::invalid_argument("NetConfig: head_taps must be 1 or 3");
}

template <typename Scalar>
std::vector<Stage<Scalar>*> Network<Scalar>::stages() {
  std::vector<Stage<Scalar>*> out{&extraction};
  for (auto& b : branches) {
    if (b.head) out.push_back(&*b.head);
    for (auto& l : b.layers) out.push_back(&l);
  }
  out.push_back(&fusion);
  return out;
}

template <typename Scalar>
std::vector<const Stage<Scalar>*> Network<Scalar>::stages() const {
  std::vector<const Stage<Scalar>*> out{&extraction};
  for (const auto& b : branches) {
    if (b.head) out.push_back(&*b.head);
    for (const auto& l : b.layers) out.push_back(&l);
  }
  out.push_back(&fusion);
  return out;
}

template <typename Scalar>
std::vector<VectorX<Scalar>*> Network<Scalar>::parameters() {
  std::vector<VectorX<Scalar>*> out;
  for (Stage<Scalar>* st : stages()) {
    for (auto& l : st->weights.layers) out.push_back(&layer_weights(l));
  }
  return out;
}

namespace {

constexpr Dims kCube{3, 3, 3};

template <typename Scalar>
Stage<Scalar> make_stage(std::string name, const BlockSpec& spec, Activation act) {
  return Stage<Scalar>{std::move(name), spec, zero_block<Scalar>(spec), act};
}

// Topology with zero weights. `lightweight` selects replacement of interior stages.
template <typename Scalar>
Network<Scalar> layout(const NetConfig& cfg, bool lightweight) {
  cfg.validate();
  const int D = cfg.depth, K = cfg.channels, F = cfg.first_channels();
  const BlockKind kind = lightweight ? cfg.kind : BlockKind::Standard;
  auto standard = [](int s, int t, Dims taps = kCube) { return BlockSpec{BlockKind::Standard, s, t, 0, taps}; };
  auto interior = [&](int s, int t) { return make_block_spec(kind, s, t, cfg.ratio, kCube); };

  Network<Scalar> net;
  net.config = cfg;
  net.extraction = make_stage<Scalar>("extraction", standard(1, F), Activation::None);
  for (int i = 1; i <= D; ++i) {
    Branch<Scalar> br;
    const std::string prefix = "branch" + std::to_string(i);
    if (i >= 2) {
      const int h = cfg.head_taps;
      const BlockSpec head = (h > 1) ? interior((i - 1) * K, K) : standard((i - 1) * K, K, Dims{h, h, h});
      br.head = make_stage<Scalar>(prefix + ".head", head, Activation::ReLU);
    }
    const int layers = D - i + 1;
    for (int j = 1; j <= layers; ++j) {
      const BlockSpec spec = (i == 1 && j == 1) ? standard(F, K) : interior(K, K);
      br.layers.push_back(make_stage<Scalar>(prefix + ".layer" + std::to_string(j), spec, Activation::ReLU));
    }
    net.branches.push_back(std::move(br));
  }
  net.fusion = make_stage<Scalar>("fusion", interior(D * K, F), Activation::None);
  return net;
}

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 step
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template <typename Scalar>
void initialize(Network<Scalar>& net, std::uint64_t seed) {
  std::uint64_t index = 0;
  for (Stage<Scalar>* st : net.stages()) {
    st->weights = build_block<Scalar>(st->spec, stage_seed(seed, index++), st->activation);
  }
}

}  // namespace

template <typename Scalar>
Network<Scalar> build_parallelnet(const NetConfig& cfg, std::uint64_t seed) {
  if (cfg.kind != BlockKind::Standard) {
    throw std::invalid_argument("build_parallelnet: block kind must be standard");
  }
  Network<Scalar> net = layout<Scalar>(cfg, false);
  initialize(net, seed);
  return net;
}

template <typename Scalar>
Network<Scalar> build_volumenet(const NetConfig& cfg, std::uint64_t seed) {
  Network<Scalar> net = layout<Scalar>(cfg, true);
  initialize(net, seed);
  return net;
}

template <typename Scalar>
Network<Scalar> build_network(const NetConfig& cfg, std::uint64_t seed) {
  return cfg.kind == BlockKind::Standard ? build_parallelnet<Scalar>(cfg, seed)
                                         : build_volumenet<Scalar>(cfg, seed);
}

template <typename Scalar>
Network<Scalar> zero_network(const NetConfig& cfg) {
  return layout<Scalar>(cfg, true);
}

template <typename Scalar>
Volume<Scalar> forward(const Network<Scalar>& net, const Volume<Scalar>& input) {
  if (input.channels() != 1) {
    throw ShapeError("forward: expected a 1-channel input, got " + std::to_string(input.channels()));
  }
  Eval<Scalar> ex;
  return apply_network(ex, net, input);
}

template <typename Scalar>
Dims receptive_radius(const Network<Scalar>& net) {
  Dims out{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    auto half = [a](const Stage<Scalar>& st) { return st.spec.taps[static_cast<std::size_t>(a)] / 2; };
    const int D = net.config.depth;
    const int f0 = half(net.extraction);
    // radius[i][j] of F(i+1, j+1)
    std::vector<std::vector<int>> radius(static_cast<std::size_t>(D));
    int fused_in = 0;
    for (int i = 0; i < D; ++i) {
      const auto& br = net.branches[static_cast<std::size_t>(i)];
      int h = f0;
      if (i > 0) {
        int m = 0;
        for (int k = 0; k < i; ++k) m = std::max(m, radius[static_cast<std::size_t>(k)][static_cast<std::size_t>(i - k - 1)]);
        h = m + half(*br.head);
      }
      for (const auto& l : br.layers) {
        h += half(l);
        radius[static_cast<std::size_t>(i)].push_back(h);
      }
      fused_in = std::max(fused_in, h);
    }
    out[static_cast<std::size_t>(a)] = std::max(f0, fused_in + half(net.fusion));
  }
  return out;
}

template <typename Scalar>
Volume<Scalar> forward_tiled(const Network<Scalar>& net, const Volume<Scalar>& input, int tile,
                             int margin, int workers) {
  if (input.channels() != 1) throw ShapeError("forward_tiled: expected a 1-channel input");
  if (tile < 1 || margin < 0) throw std::invalid_argument("forward_tiled: tile must be >= 1, margin >= 0");
  const Dims& n = input.dims();
  const int r = net.config.scale;
  std::vector<Dims> origins;
  for (int x = 0; x < n[0]; x += tile) {
    for (int y = 0; y < n[1]; y += tile) {
      for (int z = 0; z < n[2]; z += tile) origins.push_back({x, y, z});
    }
  }
  Volume<Scalar> out(1, Dims{n[0] * r, n[1] * r, n[2] * r});
  parallel_for(static_cast<int>(origins.size()), workers, [&](int t) {
    const Dims& o = origins[static_cast<std::size_t>(t)];
    Dims lo{}, ext{}, core{}, offset{};
    for (int a = 0; a < 3; ++a) {
      core[a] = std::min(tile, n[a] - o[a]);
      lo[a] = std::max(0, o[a] - margin);
      ext[a] = std::min(n[a], o[a] + core[a] + margin) - lo[a];
      offset[a] = (o[a] - lo[a]) * r;
    }
    const Volume<Scalar> sr = forward(net, crop(input, lo, ext));
    paste(out, crop(sr, offset, Dims{core[0] * r, core[1] * r, core[2] * r}), Dims{o[0] * r, o[1] * r, o[2] * r});
  });
  return out;
}

template <typename Scalar>
ParamReport param_count_network(const Network<Scalar>& net) {
  ParamReport rep;
  rep.breakdown.push_back({"extraction", net.extraction.weights.element_count()});
  for (std::size_t i = 0; i < net.branches.size(); ++i) {
    std::int64_t n = 0;
    const auto& br = net.branches[i];
    if (br.head) n += br.head->weights.element_count();
    for (const auto& l : br.layers) n += l.weights.element_count();
    rep.breakdown.push_back({"branch" + std::to_string(i + 1), n});
  }
  rep.breakdown.push_back({"fusion", net.fusion.weights.element_count()});
  for (const auto& s : rep.breakdown) rep.total += s.params;
  return rep;
}

ParamReport param_count_network(const NetConfig& cfg) {
  const Network<float> net = layout<float>(cfg, cfg.kind != BlockKind::Standard);
  ParamReport rep;
  rep.breakdown.push_back({"extraction", param_count(net.extraction.spec)});
  for (std::size_t i = 0; i < net.branches.size(); ++i) {
    std::int64_t n = 0;
    const auto& br = net.branches[i];
    if (br.head) n += param_count(br.head->spec);
    for (const auto& l : br.layers) n += param_count(l.spec);
    rep.breakdown.push_back({"branch" + std::to_string(i + 1), n});
  }
  rep.breakdown.push_back({"fusion", param_count(net.fusion.spec)});
  for (const auto& s : rep.breakdown) rep.total += s.params;
  return rep;
}

std::string network_name(const NetConfig& cfg) {
  std::string name = cfg.kind == BlockKind::Standard ? "ParallelNet" : "VolumeNet";
  name += " (D" + std::to_string(cfg.depth) + ", C" + std::to_string(cfg.channels);
  if (cfg.kind != BlockKind::Standard) name += ", " + std::string(to_string(cfg.kind));
  return name + ")";
}

nlohmann::json config_to_json(const NetConfig& cfg) {
  return {{"depth", cfg.depth},
          {"channels", cfg.channels},
          {"scale", cfg.scale},
          {"kind", std::string(to_string(cfg.kind))},
          {"ratio", cfg.ratio},
          {"head_taps", cfg.head_taps},
          {"global_residual", cfg.global_residual}};
}

NetConfig config_from_json(const nlohmann::json& j) {
  NetConfig cfg;
  try {
    cfg.depth = j.at("depth").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.scale = j.at("scale").get<int>();
    cfg.kind = parse_block_kind(j.at("kind").get<std::string>());
    cfg.ratio = j.at("ratio").get<double>();
    cfg.head_taps = j.at("head_taps").get<int>();
    cfg.global_residual = j.at("global_residual").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("network config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {
constexpr char kNetMagic[9] = "VNNET001";
}

void write_network(std::ostream& out, const Network<float>& net) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto* st : net.stages()) {
    stages.push_back({{"name", st->name}, {"activation", st->activation == Activation::ReLU ? "relu" : "none"}});
  }
  detail::write_framed_header(out, kNetMagic, {{"config", config_to_json(net.config)}, {"stages", stages}});
  for (const auto* st : net.stages()) write_block(out, st->spec, st->weights);
  if (!out) throw IoError("write_network: stream write failed");
}

Network<float> read_network(std::istream& in) {
  const nlohmann::json h = detail::read_framed_header(in, kNetMagic);
  NetConfig cfg;
  try {
    cfg = config_from_json(h.at("config"));
  } catch (const std::exception& e) {
    throw FormatError(std::string("network header: ") + e.what());
  }
  Network<float> net = layout<float>(cfg, cfg.kind != BlockKind::Standard);
  const auto stages = net.stages();
  if (!h.contains("stages") || h["stages"].size() != stages.size()) {
    throw FormatError("network header: stage list does not match configuration");
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (h["stages"][i].value("name", "") != stages[i]->name) {
      throw FormatError("network header: unexpected stage '" + h["stages"][i].value("name", "") + "'");
    }
    auto [spec, weights] = read_block(in);
    if (!(spec == stages[i]->spec)) {
      throw FormatError("network stream: block spec mismatch at stage " + stages[i]->name);
    }
    stages[i]->weights = std::move(weights);
  }
  return net;
}

void save_network(const std::string& path, const Network<float>& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_network(out, net);
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
}

Network<float> load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_network(in);
}

#define VOLNET_INSTANTIATE_NETWORK(S)                                                  \
  template struct Network<S>;                                                         \
  template Network<S> build_parallelnet<S>(const NetConfig&, std::uint64_t);          \
  template Network<S> build_volumenet<S>(const NetConfig&, std::uint64_t);            \
  template Network<S> build_network<S>(const NetConfig&, std::uint64_t);              \
  template Network<S> zero_network<S>(const NetConfig&);                              \
  template Volume<S> forward(const Network<S>&, const Volume<S>&);                    \
  template Dims receptive_radius(const Network<S>&);                                  \
  template Volume<S> forward_tiled(const Network<S>&, const Volume<S>&, int, int, int); \
  template ParamReport param_count_network(const Network<S>&);

VOLNET_INSTANTIATE_NETWORK(float)
VOLNET_INSTANTIATE_NETWORK(double)

}  // namespace volnet

#include "volnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "volnet/autodiff.hpp"
#include "volnet/data_io.hpp"
#include "volnet/metrics.hpp"
#include "volnet/ops.hpp"
#include "volnet/parallel.hpp"

namespace volnet {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("training config: " + m); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (patch_size < 8) fail("patch_size must be >= 8");
  if (patience < 1) fail("patience must be >= 1");
  if (batches_per_epoch < 1) fail("batches_per_epoch must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (workers < 1) fail("workers must be >= 1");
  if (val_tile < 1) fail("val_tile must be >= 1");
  if (!(max_seconds >= 0.0)) fail("max_seconds must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay must lie in (0, 1]");
  if (lr_decay_every < 0) fail("lr_decay_every must be >= 0");
}

double scheduled_learning_rate(const TrainConfig& cfg, int completed_epochs) {
  if (cfg.lr_decay_every == 0) return cfg.learning_rate;
  return cfg.learning_rate * std::pow(cfg.lr_decay, completed_epochs / cfg.lr_decay_every);
}

template <typename Scalar>
double l1_loss(const Volume<Scalar>& sr, const Volume<Scalar>& hr) {
  if (!sr.same_shape(hr)) throw ShapeError("l1_loss: shape mismatch " + to_string(sr.dims()) + " vs " + to_string(hr.dims()));
  if (sr.empty()) throw ShapeError("l1_loss: empty volume");
  double acc = 0.0;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    acc += std::abs(static_cast<double>(sr.data()[i]) - static_cast<double>(hr.data()[i]));
  }
  return acc / static_cast<double>(sr.size());
}

template <typename Scalar>
Volume<Scalar> l1_loss_grad(const Volume<Scalar>& sr, const Volume<Scalar>& hr) {
  if (!sr.same_shape(hr)) throw ShapeError("l1_loss_grad: shape mismatch");
  Volume<Scalar> g = Volume<Scalar>::zeros_like(sr);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(sr.size());
  for (std::size_t i = 0; i < sr.size(); ++i) {
    const Scalar d = sr.data()[i] - hr.data()[i];
    g.data()[i] = d > 0 ? inv : (d < 0 ? -inv : Scalar(0));
  }
  return g;
}

template <typename Scalar>
void adam_step(const std::vector<VectorX<Scalar>*>& weights, const std::vector<VectorX<Scalar>>& grads,
               AdamState<Scalar>& state, const TrainConfig& cfg) {
  if (weights.size() != grads.size()) throw ShapeError("adam_step: weight/gradient count mismatch");
  if (state.m.empty() && state.step == 0) {
    for (const auto* w : weights) {
      state.m.push_back(VectorX<Scalar>::Zero(w->size()));
      state.v.push_back(VectorX<Scalar>::Zero(w->size()));
    }
  }
  if (state.m.size() != weights.size() || state.v.size() != weights.size()) {
    throw ShapeError("adam_step: optimizer state does not match the weights");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (grads[i].size() != weights[i]->size() || state.m[i].size() != weights[i]->size() ||
        state.v[i].size() != weights[i]->size()) {
      throw ShapeError("adam_step: shape mismatch at tensor " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    weights[i]->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

PatchPair sample_patch_pair(const VolumeF& lr, const VolumeF& hr, int patch, int scale, std::mt19937_64& rng) {
  const Dims& n = lr.dims();
  for (int a = 0; a < 3; ++a) {
    if (hr.dims()[a] != scale * n[a]) {
      throw ShapeError("sample_patch_pair: HR dims " + to_string(hr.dims()) + " are not " + std::to_string(scale) +
                       " x LR dims " + to_string(n));
    }
    if (n[a] < patch) throw ShapeError("sample_patch_pair: volume " + to_string(n) + " smaller than the patch");
  }
  PatchPair p;
  for (int a = 0; a < 3; ++a) {
    std::uniform_int_distribution<int> pick(0, n[a] - patch);
    p.lr_origin[a] = pick(rng);
  }
  const Dims hr_origin{p.lr_origin[0] * scale, p.lr_origin[1] * scale, p.lr_origin[2] * scale};
  p.lr = crop(lr, p.lr_origin, Dims{patch, patch, patch});
  p.hr = crop(hr, hr_origin, Dims{patch * scale, patch * scale, patch * scale});
  return p;
}

std::vector<PatchPair> sample_patch_pairs(const VolumeF& lr, const VolumeF& hr, const TrainConfig& cfg, int scale,
                                          std::mt19937_64& rng) {
  std::vector<PatchPair> out;
  out.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) out.push_back(sample_patch_pair(lr, hr, cfg.patch_size, scale, rng));
  return out;
}

VolumePair make_pair_from_hr(const VolumeF& hr, int scale) {
  if (scale != 2) throw std::invalid_argument("make_pair_from_hr: only x2 degradation is supported");
  for (int d : hr.dims()) {
    if (d % scale != 0) throw ShapeError("make_pair_from_hr: HR dims " + to_string(hr.dims()) + " not divisible by 2");
  }
  return {tricubic_resample(hr, ResampleFactor{1, scale}), hr};
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(what + " is not finite (" + std::to_string(v) + ")");
}

bool should_stop(const TrainSession& s, const TrainConfig& cfg) {
  if (s.since_improvement >= cfg.patience || s.epoch >= cfg.max_epochs) return true;
  if (cfg.max_seconds <= 0.0) return false;
  double spent = 0.0;
  for (const auto& r : s.history) spent += r.seconds;
  return spent >= cfg.max_seconds;
}

}  // namespace

TrainSession start_session(Network<float> net) {
  TrainSession s;
  s.best = net;
  s.net = std::move(net);
  return s;
}

double validation_l1(const Network<float>& net, const std::vector<VolumePair>& set, const TrainConfig& cfg) {
  if (set.empty()) throw std::invalid_argument("validation_l1: empty validation set");
  const Dims rad = receptive_radius(net);
  const int margin = *std::max_element(rad.begin(), rad.end());
  double acc = 0.0;
  for (const auto& p : set) acc += l1_loss(forward_tiled(net, p.lr, cfg.val_tile, margin, cfg.workers), p.hr);
  return acc / static_cast<double>(set.size());
}

bool run_epoch(TrainSession& s, const std::vector<VolumePair>& train_set, const std::vector<VolumePair>& val_set,
               const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
  const auto t0 = std::chrono::steady_clock::now();
  const int scale = s.net.config.scale;
  std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(s.epoch)));
  std::uniform_int_distribution<std::size_t> pick_volume(0, train_set.size() - 1);

  TrainConfig step_cfg = cfg;
  step_cfg.learning_rate = scheduled_learning_rate(cfg, s.epoch);

  const std::vector<VectorX<float>*> params = s.net.parameters();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::vector<VectorX<float>>> patch_grads(batch);
  std::vector<double> patch_loss(batch);
  double epoch_loss = 0.0;

  for (int b = 0; b < cfg.batches_per_epoch; ++b) {
    std::vector<PatchPair> patches;
    for (std::size_t i = 0; i < batch; ++i) {
      const VolumePair& v = train_set[pick_volume(rng)];
      patches.push_back(sample_patch_pair(v.lr, v.hr, cfg.patch_size, scale, rng));
    }
    parallel_for(static_cast<int>(batch), cfg.workers, [&](int i) {
      auto& grads = patch_grads[static_cast<std::size_t>(i)];
      grads.resize(params.size());
      Tape<float> tape;
      for (std::size_t k = 0; k < params.size(); ++k) {
        grads[k].setZero(params[k]->size());
        tape.bind_gradient(*params[k], grads[k]);
      }
      const PatchPair& p = patches[static_cast<std::size_t>(i)];
      const auto out = apply_network(tape, s.net, tape.input(p.lr));
      patch_loss[static_cast<std::size_t>(i)] = l1_loss(tape.value(out), p.hr);
      tape.backward(out, l1_loss_grad(tape.value(out), p.hr));
    });
    // Fixed summation order keeps the update independent of worker count.
    std::vector<VectorX<float>> grads = patch_grads[0];
    double loss = patch_loss[0];
    for (std::size_t i = 1; i < batch; ++i) {
      for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += patch_grads[i][k];
      loss += patch_loss[i];
    }
    loss /= static_cast<double>(batch);
    require_finite(loss, "training loss at epoch " + std::to_string(s.epoch + 1) + ", batch " + std::to_string(b + 1));
    const float inv = 1.0f / static_cast<float>(batch);
    for (auto& g : grads) g *= inv;
    adam_step(params, grads, s.adam, step_cfg);
    epoch_loss += loss;
  }

  EpochRecord rec;
  rec.epoch = ++s.epoch;
  rec.train_l1 = epoch_loss / cfg.batches_per_epoch;
  rec.val_l1 = validation_l1(s.net, val_set, cfg);
  require_finite(rec.val_l1, "validation loss at epoch " + std::to_string(rec.epoch));
  if (rec.val_l1 < s.best_val) {
    s.best_val = rec.val_l1;
    s.best = s.net;
    s.since_improvement = 0;
  } else {
    ++s.since_improvement;
  }
  rec.best_val = s.best_val;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  s.history.push_back(rec);
  s.stopped = should_stop(s, cfg);
  return !s.stopped;
}

void train(TrainSession& s, const std::vector<VolumePair>& train_set, const std::vector<VolumePair>& val_set,
           const TrainConfig& cfg, const EpochCallback& on_epoch) {
  // Stopping is judged against the config in use, so a resumed session may
  // continue past the max_epochs it was saved under.
  s.stopped = should_stop(s, cfg);
  if (s.stopped) return;
  for (;;) {
    const bool more = run_epoch(s, train_set, val_set, cfg);
    if (on_epoch) on_epoch(s);
    if (!more) break;
  }
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_l1,val_l1,best_val,seconds\n";
  out.precision(9);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_l1 << ',' << r.val_l1 << ',' << r.best_val << ',' << format_metric(r.seconds, 3)
        << '\n';
  }
  return out.str();
}

namespace {

constexpr char kSessionMagic[9] = "VNSES001";

void write_vectors(std::ostream& out, const std::vector<VectorX<float>>& vs) {
  for (const auto& v : vs) detail::write_f32(out, v.data(), static_cast<std::size_t>(v.size()));
}

std::vector<VectorX<float>> read_vectors(std::istream& in, const std::vector<std::int64_t>& sizes) {
  std::vector<VectorX<float>> vs;
  for (auto n : sizes) {
    VectorX<float> v(n);
    detail::read_f32(in, v.data(), static_cast<std::size_t>(n));
    vs.push_back(std::move(v));
  }
  return vs;
}

}  // namespace

void write_session(std::ostream& out, const TrainSession& s) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : s.history) {
    hist.push_back({r.epoch, r.train_l1, r.val_l1, r.best_val, r.seconds});
  }
  nlohmann::json h = {{"epoch", s.epoch},
                      {"step", s.adam.step},
                      {"best_val", std::isfinite(s.best_val) ? nlohmann::json(s.best_val) : nlohmann::json(nullptr)},
                      {"since_improvement", s.since_improvement},
                      {"stopped", s.stopped},
                      {"moments", !s.adam.m.empty()},
                      {"history", hist}};
  detail::write_framed_header(out, kSessionMagic, h);
  write_network(out, s.net);
  write_network(out, s.best);
  write_vectors(out, s.adam.m);
  write_vectors(out, s.adam.v);
  if (!out) throw IoError("write_session: stream write failed");
}

TrainSession read_session(std::istream& in) {
  const nlohmann::json h = detail::read_framed_header(in, kSessionMagic);
  TrainSession s;
  try {
    s.epoch = h.at("epoch").get<int>();
    s.adam.step = h.at("step").get<std::int64_t>();
    s.best_val = h.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : h.at("best_val").get<double>();
    s.since_improvement = h.at("since_improvement").get<int>();
    s.stopped = h.at("stopped").get<bool>();
    for (const auto& r : h.at("history")) {
      s.history.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                           r.at(4).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("session header: ") + e.what());
  }
  s.net = read_network(in);
  s.best = read_network(in);
  if (!(s.net.config == s.best.config)) throw FormatError("session: current and best networks differ in configuration");
  if (h.value("moments", false)) {
    std::vector<std::int64_t> sizes;
    for (auto* p : s.net.parameters()) sizes.push_back(p->size());
    s.adam.m = read_vectors(in, sizes);
    s.adam.v = read_vectors(in, sizes);
  }
  return s;
}

void save_session(const std::string& path, const TrainSession& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_session(out, s);
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
}

TrainSession load_session(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_session(in);
}

#define VOLNET_INSTANTIATE_TRAINING(S)                                                           \
  template double l1_loss(const Volume<S>&, const Volume<S>&);                                  \
  template Volume<S> l1_loss_grad(const Volume<S>&, const Volume<S>&);                          \
  template void adam_step(const std::vector<VectorX<S>*>&, const std::vector<VectorX<S>>&, AdamState<S>&, \
                          const TrainConfig&);

VOLNET_INSTANTIATE_TRAINING(float)
VOLNET_INSTANTIATE_TRAINING(double)

}  // namespace volnet

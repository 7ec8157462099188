#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "volnet/network.hpp"

namespace volnet {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 8;          ///< LR patches per step
  int patch_size = 16;         ///< LR patch extent per axis
  int patience = 50;           ///< epochs without strict validation improvement
  int batches_per_epoch = 100;
  int max_epochs = 1000;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int workers = 1;             ///< per-patch gradient workers
  int val_tile = 32;           ///< LR tile edge for validation inference
  double max_seconds = 0.0;    ///< wall-clock budget over all epochs; 0 disables
  double lr_decay = 1.0;       ///< step factor applied every lr_decay_every epochs
  int lr_decay_every = 0;      ///< 0 keeps the learning rate constant

  void validate() const;
};

/// Mean absolute difference.
template <typename Scalar>
double l1_loss(const Volume<Scalar>& sr, const Volume<Scalar>& hr);

/// d l1_loss / d sr: sign(sr - hr) / N, 0 at ties.
template <typename Scalar>
Volume<Scalar> l1_loss_grad(const Volume<Scalar>& sr, const Volume<Scalar>& hr);

template <typename Scalar>
struct AdamState {
  std::vector<VectorX<Scalar>> m;
  std::vector<VectorX<Scalar>> v;
  std::int64_t step = 0;
};

/// Bias-corrected Adam update of `weights` in place. Moments are created on
/// the first call; shapes must match thereafter.
/// Learning rate for the epoch after `completed_epochs`:
/// learning_rate * lr_decay^floor(completed_epochs / lr_decay_every).
double scheduled_learning_rate(const TrainConfig& cfg, int completed_epochs);

template <typename Scalar>
void adam_step(const std::vector<VectorX<Scalar>*>& weights, const std::vector<VectorX<Scalar>>& grads,
               AdamState<Scalar>& state, const TrainConfig& cfg);

struct PatchPair {
  VolumeF lr;
  VolumeF hr;
  Dims lr_origin{0, 0, 0};
};

/// Uniform over valid LR origins; the HR patch starts at scale * origin and is
/// scale times larger.
PatchPair sample_patch_pair(const VolumeF& lr, const VolumeF& hr, int patch, int scale, std::mt19937_64& rng);
std::vector<PatchPair> sample_patch_pairs(const VolumeF& lr, const VolumeF& hr, const TrainConfig& cfg, int scale,
                                          std::mt19937_64& rng);

/// One registered (LR, HR) training volume pair.
struct VolumePair {
  VolumeF lr;
  VolumeF hr;
};

/// LR by tricubic 1/scale degradation of `hr`.
VolumePair make_pair_from_hr(const VolumeF& hr, int scale);

struct EpochRecord {
  int epoch = 0;
  double train_l1 = 0.0;
  double val_l1 = 0.0;
  double best_val = 0.0;
  double seconds = 0.0;
};

/// Everything needed to continue training bit-identically.
struct TrainSession {
  Network<float> net;
  Network<float> best;
  AdamState<float> adam;
  int epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  bool stopped = false;
  std::vector<EpochRecord> history;
};

TrainSession start_session(Network<float> net);

/// Mean L1 over full volumes, inferred tile by tile.
double validation_l1(const Network<float>& net, const std::vector<VolumePair>& set, const TrainConfig& cfg);

/// Runs one epoch and updates early-stopping state. Returns false once
/// training should stop (patience exhausted, max_epochs reached, or the
/// summed epoch time has used up max_seconds).
bool run_epoch(TrainSession& s, const std::vector<VolumePair>& train_set, const std::vector<VolumePair>& val_set,
               const TrainConfig& cfg);

using EpochCallback = std::function<void(const TrainSession&)>;

/// Trains until early stopping or max_epochs; `on_epoch` fires after each epoch.
void train(TrainSession& s, const std::vector<VolumePair>& train_set, const std::vector<VolumePair>& val_set,
           const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::string history_csv(const std::vector<EpochRecord>& history);

void write_session(std::ostream& out, const TrainSession& s);
TrainSession read_session(std::istream& in);
void save_session(const std::string& path, const TrainSession& s);
TrainSession load_session(const std::string& path);

}  // namespace volnet

#pragma once

// Backpropagation training: categorical cross-entropy, Adam, a
// reduce-on-plateau learning-rate schedule, and best-weights checkpointing.

#include <cstdint>
#include <string>
#include <vector>

#include "microquant/netgraph.hpp"
#include "microquant/tensor.hpp"

namespace microquant {

struct TrainConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  int batch_size = 32;
  int epochs = 10;
  double plateau_factor = 0.2;
  int plateau_patience = 5;
  uint64_t seed = 0;
  std::string checkpoint_path;  // empty keeps the best weights in memory only
};

struct AdamState {
  std::vector<LayerWeights> m;  // parallel to ModelSpec::weights
  std::vector<LayerWeights> v;
  int64_t t = 0;
};

AdamState make_adam_state(const ModelSpec& spec);

// Mean over the batch of -sum_c y*ln(p); probabilities floored at 1e-12.
// probs/labels are [n, M] (or [M] for a single row); labels must be one-hot
// and each probability row must sum to 1 within 1e-4.
double cross_entropy_loss(const Tensor& probs, const Tensor& labels);

// Gradients of the mean cross-entropy loss for every weight tensor.
// batch is [n, h, w, c], labels one-hot [n, M]; the final layer must be a
// softmax dense (the softmax+cross-entropy gradient is fused as (p - y)/n).
std::vector<LayerWeights> backward(const ModelSpec& spec, const Tensor& batch,
                                   const Tensor& labels);

// One Adam update at learning rate `lr` (the schedule owns the current rate;
// cfg supplies the moment decays and epsilon).
void adam_step(ModelSpec& spec, const std::vector<LayerWeights>& grads,
               AdamState& state, const TrainConfig& cfg, double lr);

class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor, int patience)
      : lr_(initial_lr), factor_(factor), patience_(patience) {}

  // Feed one epoch's monitored value; returns the rate for the next epoch.
  double observe(double metric);
  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  int stale_ = 0;
  double best_ = 0.0;
  bool has_best_ = false;
};

// Replays a validation-accuracy history through the schedule and returns the
// final learning rate.
double reduce_lr_on_plateau(const std::vector<double>& history, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;      // NaN when no validation set
  double val_accuracy = 0.0;  // NaN when no validation set
  double learning_rate = 0.0;
};

struct FitResult {
  ModelSpec model;  // best-checkpoint weights
  std::vector<EpochStats> history;
  int best_epoch = 0;        // 1-based epoch of the checkpoint
  double best_monitor = 0.0; // best validation (or train) accuracy seen
};

// Seeded training loop. Shuffles each epoch, checkpoints whenever the
// monitored accuracy strictly improves (validation accuracy, or train
// accuracy when val is empty), and returns the best weights. When
// cfg.checkpoint_path is set the best model is also written there with a
// JSON sidecar (epoch, val accuracy, lr) at <path>.json.
FitResult fit(ModelSpec spec, const std::vector<Tensor>& train_inputs,
              const std::vector<int>& train_labels,
              const std::vector<Tensor>& val_inputs,
              const std::vector<int>& val_labels, const TrainConfig& cfg);

// He-uniform kernels, zero biases; replaces any existing weights.
void init_weights(ModelSpec& spec, uint64_t seed);

}  // namespace microquant

#pragma once

// Adam, weight decay, gradient clipping and the training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grounder/data.hpp"
#include "grounder/model.hpp"

namespace grounder {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool operator==(const AdamHyper&) const = default;
};

// Moments are stored in learnable_params order.
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  bool operator==(const AdamState&) const = default;
};

AdamState init_adam(ModelParams& model, const AdamHyper& hyper = {});

struct GradSlot {
  std::string name;
  std::string group;
  Tensor* value;
  Tensor* grad;
  bool is_weight;
};

// Pairs each learnable tensor of `params` with its buffer in `grads`.
std::vector<GradSlot> bind_slots(ModelParams& params, ModelParams& grads);

// One bias-corrected Adam update. A non-finite gradient is a NumericError
// naming the offending tensor and its group.
void adam_step(std::span<const GradSlot> slots, AdamState& state);

// g += coefficient * theta on weight matrices and embeddings only.
void apply_weight_decay(std::span<const GradSlot> slots, double coefficient);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<const GradSlot> slots, double max_norm);

// Log-linear through (0.0312, 200) and (0.125, 50), extended beyond them.
double default_lambda(double supervision_fraction);

struct TrainConfig {
  ForwardMode mode = ForwardMode::kSemiSupervised;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  AdamHyper adam;
  std::optional<double> weight_decay;  // default: 0.0005 unsupervised, otherwise 0
  std::optional<double> lambda;        // default: default_lambda(supervision_fraction)
  std::optional<bool> batchnorm;       // default: on when attention supervision is used
  double supervision_fraction = 1.0;
  double clip_norm = 5.0;  // <= 0 disables clipping
  AttentionNorm attention_norm = AttentionNorm::kAllPhrases;
  std::uint64_t seed = 1;
  bool log_batches = false;

  // Throws ConfigError.
  void validate() const;
  double resolved_weight_decay() const;
  double resolved_lambda() const;
  bool resolved_batchnorm() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double l_att = 0.0;
  double l_rec = 0.0;
  double val_accuracy = 0.0;
  bool operator==(const EpochMetrics&) const = default;
};

struct BatchRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::size_t size = 0;
  double lambda = 0.0;
  std::optional<double> l_att;
  std::optional<double> l_rec;
  double objective = 0.0;
};

struct TrainResult {
  ModelParams best;  // snapshot with the highest validation accuracy, earliest on ties
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  AdamState adam;  // state after the last epoch
  std::vector<EpochMetrics> metrics;
  std::vector<BatchRecord> batches;  // filled when log_batches is set
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Masks supervision down to config.supervision_fraction (semi and full
// modes), shuffles phrases each epoch and picks the best epoch on `val`
// (the training set when `val` is null or empty). Divergence is a
// NumericError carrying the epoch and batch.
TrainResult train(const DatasetManifest& dataset, const DatasetManifest* val,
                  const TrainConfig& config, ModelParams model,
                  const EpochCallback& on_epoch = {});

}  // namespace grounder

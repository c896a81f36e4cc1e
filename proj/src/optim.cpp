#include "grounder/optim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "grounder/error.hpp"
#include "grounder/eval.hpp"
#include "grounder/kernels.hpp"

namespace grounder {

AdamState init_adam(ModelParams& model, const AdamHyper& hyper) {
  AdamState state;
  state.hyper = hyper;
  for (const auto& ref : learnable_params(model)) {
    state.m.emplace_back(ref.tensor->shape());
    state.v.emplace_back(ref.tensor->shape());
  }
  return state;
}

std::vector<GradSlot> bind_slots(ModelParams& params, ModelParams& grads) {
  auto values = learnable_params(params);
  auto gs = learnable_params(grads);
  if (values.size() != gs.size()) throw DimensionError("bind_slots: parameter lists differ");
  std::vector<GradSlot> slots;
  slots.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].tensor->shape() != gs[i].tensor->shape()) {
      throw DimensionError("bind_slots: shape mismatch for " + values[i].name);
    }
    slots.push_back({values[i].name, values[i].group, values[i].tensor, gs[i].tensor, values[i].is_weight});
  }
  return slots;
}

void adam_step(std::span<const GradSlot> slots, AdamState& state) {
  if (state.m.size() != slots.size() || state.v.size() != slots.size()) {
    throw DimensionError("adam_step: optimizer state does not match the parameters");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& s = slots[i];
    if (s.value->shape() != s.grad->shape() || state.m[i].shape() != s.value->shape()) {
      throw DimensionError("adam_step: shape mismatch for " + s.name);
    }
    if (!s.grad->all_finite()) {
      throw NumericError("non-finite gradient in parameter group " + s.group + " (" + s.name + ")");
    }
  }
  const auto& hp = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    double* theta = slots[i].value->data();
    const double* g = slots[i].grad->data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t k = 0; k < slots[i].value->size(); ++k) {
      m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
      v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= hp.learning_rate * m_hat / (std::sqrt(v_hat) + hp.epsilon);
    }
  }
}

void apply_weight_decay(std::span<const GradSlot> slots, double coefficient) {
  if (coefficient < 0.0) throw PreconditionError("apply_weight_decay: negative coefficient");
  if (coefficient == 0.0) return;
  const auto& k = kernels::active();
  for (const auto& s : slots) {
    if (!s.is_weight) continue;
    k.axpy(coefficient, s.value->data(), s.grad->data(), s.value->size());
  }
}

double clip_grad_norm(std::span<const GradSlot> slots, double max_norm) {
  double sq = 0.0;
  for (const auto& s : slots) {
    for (double g : s.grad->values()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (std::isinf(norm)) {
    // squares overflowed; rescale by the largest magnitude
    double mx = 0.0;
    for (const auto& s : slots) {
      for (double g : s.grad->values()) mx = std::max(mx, std::abs(g));
    }
    double r = 0.0;
    for (const auto& s : slots) {
      for (double g : s.grad->values()) r += (g / mx) * (g / mx);
    }
    norm = mx * std::sqrt(r);
  }
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& s : slots) {
      for (double& g : s.grad->values()) g *= scale;
    }
  }
  return norm;
}

double default_lambda(double fraction) {
  constexpr double kLowFraction = 0.0312;
  constexpr double kLowLambda = 200.0;
  constexpr double kHighFraction = 0.125;
  constexpr double kHighLambda = 50.0;
  if (!(fraction > 0.0)) return kLowLambda;
  if (fraction == kLowFraction) return kLowLambda;
  if (fraction == kHighFraction) return kHighLambda;
  const double slope = (std::log(kHighLambda) - std::log(kLowLambda)) /
                       (std::log(kHighFraction) - std::log(kLowFraction));
  return std::exp(std::log(kLowLambda) + slope * (std::log(fraction) - std::log(kLowFraction)));
}

void TrainConfig::validate() const {
  if (!(supervision_fraction >= 0.0 && supervision_fraction <= 1.0)) {
    throw ConfigError("supervision_fraction must lie in [0, 1]");
  }
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (mode == ForwardMode::kEval) throw ConfigError("cannot train in eval mode");
  if (!(adam.learning_rate >= 0.0) || !(adam.epsilon > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  if (weight_decay && !(*weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (lambda && !(*lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
}

double TrainConfig::resolved_weight_decay() const {
  if (weight_decay) return *weight_decay;
  return mode == ForwardMode::kUnsupervised ? 0.0005 : 0.0;
}

double TrainConfig::resolved_lambda() const {
  return lambda ? *lambda : default_lambda(supervision_fraction);
}

bool TrainConfig::resolved_batchnorm() const {
  if (batchnorm) return *batchnorm;
  return mode != ForwardMode::kUnsupervised && supervision_fraction > 0.0;
}

namespace {

struct PhraseRef {
  std::size_t sample;
  std::size_t phrase;
};

// Splits a shuffled order into batches; a trailing batch of one joins its
// predecessor when batch norm needs at least two rows.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size,
                                                              bool need_pairs) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(start, std::min(n, start + batch_size));
  }
  if (need_pairs && out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

}  // namespace

TrainResult train(const DatasetManifest& dataset, const DatasetManifest* val, const TrainConfig& config,
                  ModelParams model, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.samples.empty()) throw DataError("training set is empty");
  if (model.config.feature_width != dataset.feature_width) {
    throw ConfigError("model feature width " + std::to_string(model.config.feature_width) +
                      " does not match the dataset (" + std::to_string(dataset.feature_width) + ")");
  }
  if (model.config.vocab_size < dataset.vocab.size()) {
    throw ConfigError("model vocabulary is smaller than the dataset vocabulary");
  }
  model.config.batchnorm = config.resolved_batchnorm();

  DatasetManifest data = dataset;
  if (config.mode == ForwardMode::kUnsupervised) {
    for (auto& s : data.samples) {
      for (auto& p : s.phrases) p.gt_attention.reset();
    }
  } else {
    mask_supervision(data, config.supervision_fraction, config.seed);
  }

  std::vector<PhraseRef> pool;
  for (std::size_t si = 0; si < data.samples.size(); ++si) {
    for (std::size_t pi = 0; pi < data.samples[si].phrases.size(); ++pi) {
      if (config.mode == ForwardMode::kFullySupervised && !data.samples[si].phrases[pi].gt_attention) continue;
      pool.push_back({si, pi});
    }
  }
  if (pool.empty()) throw DataError("no trainable phrases for mode " + to_string(config.mode));
  if (model.config.batchnorm && pool.size() < 2) {
    throw DataError("batch normalization needs at least two training phrases");
  }

  const DatasetManifest& val_set = (val && !val->samples.empty()) ? *val : dataset;
  const Objective objective{config.mode, config.resolved_lambda(), config.attention_norm};
  const double decay = config.resolved_weight_decay();

  TrainResult result;
  result.adam = init_adam(model, config.adam);
  ModelParams grads = zeros_like(model);
  const auto slots = bind_slots(model, grads);
  std::mt19937_64 rng(config.seed);
  std::vector<BatchItem> items;
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(pool.begin(), pool.end(), rng);
    double loss_sum = 0.0;
    double att_sum = 0.0;
    double rec_sum = 0.0;
    const auto bounds = batch_bounds(pool.size(), config.batch_size, model.config.batchnorm);
    for (std::size_t b = 0; b < bounds.size(); ++b) {
      items.clear();
      for (std::size_t k = bounds[b].first; k < bounds[b].second; ++k) {
        const auto& s = data.samples[pool[k].sample];
        items.push_back({&s.phrases[pool[k].phrase], &s.proposals});
      }
      for (const auto& s : slots) s.grad->fill(0.0);
      BatchOptions opts;
      opts.grads = &grads;
      opts.batchnorm_train = true;
      opts.running_stats = &model;
      BatchResult r;
      try {
        r = run_batch(model, items, objective, opts);
      } catch (const NumericError& e) {
        throw NumericError("diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                           ": " + e.what());
      }
      if (!std::isfinite(r.objective)) {
        throw NumericError("loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1));
      }
      const double n = static_cast<double>(items.size());
      loss_sum += r.objective * n;
      att_sum += r.l_att.value_or(0.0) * n;
      rec_sum += r.l_rec.value_or(0.0) * n;
      if (config.log_batches) {
        result.batches.push_back({epoch, b + 1, items.size(), objective.lambda, r.l_att, r.l_rec, r.objective});
      }
      apply_weight_decay(slots, decay);
      clip_grad_norm(slots, config.clip_norm);
      try {
        adam_step(slots, result.adam);
      } catch (const NumericError& e) {
        throw NumericError("diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                           ": " + e.what());
      }
    }
    const double total = static_cast<double>(pool.size());
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / total;
    m.l_att = att_sum / total;
    m.l_rec = rec_sum / total;
    m.val_accuracy = report(val_set, model).overall.value();
    result.metrics.push_back(m);
    if (!have_best || m.val_accuracy > result.best_val_accuracy) {
      have_best = true;
      result.best = model;
      result.best_epoch = epoch;
      result.best_val_accuracy = m.val_accuracy;
    }
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace grounder

#pragma once

// Reconstruction half of the model: pool proposal features under the
// attention weights, encode the pooled feature, and score the phrase under a
// teacher-forced LSTM decoder that sees the visual code at its first step.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "grounder/layers.hpp"
#include "grounder/tensor.hpp"

namespace grounder {

struct RecEncoderParams {
  Tensor w_a;  // [e x d]
  Tensor b_a;  // [e]

  static RecEncoderParams zeros(std::size_t out_dim, std::size_t feature_dim);
};

struct DecoderParams {
  LstmWeights lstm;  // input width e, hidden H
  Tensor w_out;      // [V x H]
  Tensor b_out;      // [V]

  static DecoderParams zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t vocab);
  std::size_t vocab_size() const { return w_out.rows(); }
};

// v_att = sum_i alpha_i v_i
std::vector<double> aggregate_visual(std::span<const double> alpha, const Tensor& features);
// Writes d alpha (overwriting) and adds alpha_i * dv into d_features row i when given.
void aggregate_visual_backward(std::span<const double> alpha, const Tensor& features,
                               std::span<const double> dv, std::span<double> d_alpha,
                               Tensor* d_features = nullptr);

struct VisualEncoderCache {
  std::vector<double> input;
  std::vector<double> pre_activation;
};

// relu(w_a v + b_a)
std::vector<double> encode_visual(const RecEncoderParams& params, std::span<const double> v_att,
                                  VisualEncoderCache* cache = nullptr);
// Returns d v_att; accumulates into grad.
std::vector<double> encode_visual_backward(const RecEncoderParams& params,
                                           const VisualEncoderCache& cache,
                                           std::span<const double> d_out, RecEncoderParams& grad);

struct DecoderCache {
  SequenceCache sequence;
  std::vector<std::vector<double>> hidden;
  std::vector<std::int32_t> inputs;  // token fed at steps 1..T
};

// Teacher forcing: step 0 consumes the visual code, step t >= 1 consumes the
// embedding of token t-1. Returns T+1 logit vectors predicting tokens 0..T-1
// and then end-of-sequence.
std::vector<std::vector<double>> decode_phrase_logits(const DecoderParams& params,
                                                      const EmbeddingTable& embedding,
                                                      std::span<const double> visual_code,
                                                      std::span<const std::int32_t> tokens,
                                                      DecoderCache* cache = nullptr);

// Returns d visual_code; accumulates decoder and embedding gradients.
std::vector<double> decode_phrase_backward(const DecoderParams& params,
                                           const EmbeddingTable& embedding,
                                           const DecoderCache& cache,
                                           const std::vector<std::vector<double>>& d_logits,
                                           DecoderParams& grad, EmbeddingTable& embedding_grad);

// Greedy free-running generation, for inspection only.
std::vector<std::int32_t> generate_phrase(const DecoderParams& params,
                                          const EmbeddingTable& embedding,
                                          std::span<const double> visual_code,
                                          std::size_t max_length);

std::vector<std::int32_t> with_eos(std::span<const std::int32_t> tokens);

// Sum over steps of -log P(target_t); the phrase log-likelihood.
double phrase_nll(const std::vector<std::vector<double>>& step_logits,
                  std::span<const std::int32_t> targets_with_eos);
// d phrase_nll / d logits, scaled by `scale`.
std::vector<std::vector<double>> phrase_nll_backward(
    const std::vector<std::vector<double>>& step_logits,
    std::span<const std::int32_t> targets_with_eos, double scale);

// Mean over `batch_size` phrases of their phrase_nll.
double reconstruction_loss(const std::vector<std::vector<std::vector<double>>>& step_logits,
                           const std::vector<std::vector<std::int32_t>>& targets_with_eos,
                           std::size_t batch_size);

// lambda * l_att + l_rec; lambda must be non-negative.
double combined_loss(double l_att, double l_rec, double lambda);

}  // namespace grounder

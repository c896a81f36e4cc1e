#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grounder/tensor.hpp"

namespace grounder {

// Reserved token ids shared by every vocabulary.
namespace token {
constexpr std::int32_t kUnk = 0;
constexpr std::int32_t kSos = 1;
constexpr std::int32_t kEos = 2;
constexpr std::size_t kReserved = 3;
}  // namespace token

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

enum class InitScheme { kUniform, kXavier, kMsra };

InitScheme parse_init_scheme(std::string_view name);
std::string to_string(InitScheme scheme);

// uniform: U(-range, range)
// xavier:  U(-a, a) with a = sqrt(6 / (fan_in + fan_out)), variance 2/(fan_in+fan_out)
// msra:    N(0, 2 / fan_in)
Tensor init_tensor(const Shape& shape, InitScheme scheme, std::size_t fan_in,
                   std::size_t fan_out, std::mt19937_64& rng, double uniform_range = 0.08);

// Seeded convenience form. Fans follow the [fan_in x fan_out] layout of
// `shape`; a vector uses its length for both.
Tensor init_params(const Shape& shape, InitScheme scheme, std::uint64_t seed,
                   double uniform_range = 0.08);

// ---------------------------------------------------------------------------
// Word embedding
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  Tensor weights;  // [vocab_size x dim]

  std::size_t vocab_size() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }
  // Throws IndexError for ids outside the table.
  std::span<const double> lookup(std::int32_t id) const;
};

void embedding_backward(EmbeddingTable& grad, std::int32_t id, std::span<const double> g);

// ---------------------------------------------------------------------------
// LSTM cell, gate order (input, forget, output, candidate)
// ---------------------------------------------------------------------------

struct LstmWeights {
  Tensor w_x;   // [4H x I]
  Tensor w_h;   // [4H x H]
  Tensor bias;  // [4H]

  static LstmWeights zeros(std::size_t input_dim, std::size_t hidden_dim);
  std::size_t input_dim() const { return w_x.cols(); }
  std::size_t hidden_dim() const { return w_h.cols(); }
};

LstmWeights init_lstm(std::size_t input_dim, std::size_t hidden_dim, std::mt19937_64& rng,
                      double uniform_range, double forget_bias);

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;
};

struct LstmStepCache {
  std::vector<double> x;
  std::vector<double> h_prev;
  std::vector<double> c_prev;
  std::vector<double> gates;  // activated i, f, o, g; 4H
  std::vector<double> tanh_c;
};

LstmState lstm_step(const LstmWeights& w, std::span<const double> x, std::span<const double> h_prev,
                    std::span<const double> c_prev, LstmStepCache* cache = nullptr);

struct LstmStepGrad {
  std::vector<double> dx;
  std::vector<double> dh_prev;
  std::vector<double> dc_prev;
};

// Accumulates parameter gradients into `grad`.
LstmStepGrad lstm_step_backward(const LstmWeights& w, const LstmStepCache& cache,
                                std::span<const double> dh, std::span<const double> dc,
                                LstmWeights& grad);

struct SequenceCache {
  std::vector<LstmStepCache> steps;
};

// Runs the cell left to right from a zero state; returns every hidden state.
std::vector<std::vector<double>> run_sequence(const LstmWeights& w,
                                              const std::vector<std::vector<double>>& inputs,
                                              SequenceCache* cache = nullptr);

// Backpropagation through time with a hidden-state gradient at every step.
// Returns the input gradient of every step.
std::vector<std::vector<double>> run_sequence_backward(
    const LstmWeights& w, const SequenceCache& cache,
    const std::vector<std::vector<double>>& dh_per_step, LstmWeights& grad);

// Final hidden state of run_sequence. Empty input is a PreconditionError.
std::vector<double> encode_sequence(const LstmWeights& w,
                                    const std::vector<std::vector<double>>& inputs,
                                    SequenceCache* cache = nullptr);

std::vector<std::vector<double>> encode_sequence_backward(const LstmWeights& w,
                                                          const SequenceCache& cache,
                                                          std::span<const double> dh_final,
                                                          LstmWeights& grad);

// ---------------------------------------------------------------------------
// Batch normalization over the rows of a [B x d] batch
// ---------------------------------------------------------------------------

enum class BatchNormMode { kTrain, kInfer };

struct BatchNormParams {
  Tensor scale;  // [d]
  Tensor shift;  // [d]
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNormParams identity(std::size_t dim);
  std::size_t dim() const { return scale.size(); }
};

struct BatchNormCache {
  BatchNormMode mode = BatchNormMode::kInfer;
  Tensor x_hat;
  std::vector<double> inv_std;
};

// Train mode normalizes by batch statistics (biased variance) and, when
// update_running is set, moves the running statistics toward the batch mean
// and unbiased variance by `momentum`. Infer mode uses the running statistics.
Tensor batchnorm_forward(BatchNormParams& params, const Tensor& batch, BatchNormMode mode,
                         BatchNormCache* cache = nullptr, bool update_running = true);

// Infer-mode forward that leaves the parameters untouched.
Tensor batchnorm_infer(const BatchNormParams& params, const Tensor& batch,
                       BatchNormCache* cache = nullptr);

// Returns d batch; accumulates d scale and d shift into `grad`.
Tensor batchnorm_backward(const BatchNormParams& params, const BatchNormCache& cache,
                          const Tensor& g, BatchNormParams& grad);

}  // namespace grounder

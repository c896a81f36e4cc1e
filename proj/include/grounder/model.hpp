#pragma once

// The full grounding-by-reconstruction network and its batch forward and
// backward pass.
//
//   phrase tokens -> embedding -> LSTM -> h ---------------.
//                                                          v
//   proposal features v_i ------------------------> attention MLP -> scores -> softmax alpha
//                                                                                  |
//   phrase tokens <- decoder LSTM <- relu(W_a sum_i alpha_i v_i + b_a) <-----------'
//
// Batch normalization, when enabled, is applied to h and to v_i on their way
// into the attention MLP.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grounder/attention.hpp"
#include "grounder/layers.hpp"
#include "grounder/reconstruction.hpp"

namespace grounder {

enum class ForwardMode { kUnsupervised, kSemiSupervised, kFullySupervised, kEval };

ForwardMode parse_mode(std::string_view name);
std::string to_string(ForwardMode mode);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t feature_width = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t attention_dim = 128;
  std::size_t decoder_embed_dim = 64;  // also the width of the encoded visual feature
  std::size_t decoder_hidden_dim = 128;
  bool share_embeddings = false;
  bool batchnorm = false;
  double lstm_init_range = 0.08;
  double forget_bias = 1.0;
  InitScheme init = InitScheme::kXavier;  // every non-LSTM layer
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
  ModelConfig config;
  EmbeddingTable encoder_embedding;
  LstmWeights encoder;
  BatchNormParams phrase_norm;
  BatchNormParams visual_norm;
  AttentionParams attention;
  RecEncoderParams visual_encoder;
  EmbeddingTable decoder_embedding;  // null when config.share_embeddings
  DecoderParams decoder;

  const EmbeddingTable& decoder_table() const {
    return config.share_embeddings ? encoder_embedding : decoder_embedding;
  }
  EmbeddingTable& decoder_table() {
    return config.share_embeddings ? encoder_embedding : decoder_embedding;
  }
};

ModelParams init_model(const ModelConfig& config);

// Same shapes, all zeros; used as gradient and optimizer-moment buffers.
ModelParams zeros_like(const ModelParams& model);

struct ParamRef {
  std::string name;
  std::string group;  // embedding, encoder_lstm, batchnorm, attention, visual_encoder, decoder
  Tensor* tensor;
  bool is_weight;  // weight decay applies
};

// Learnable tensors in a fixed order. Batch-norm parameters are listed only
// when enabled; the shared decoder embedding is listed once.
std::vector<ParamRef> learnable_params(ModelParams& model);

// Every stored tensor, including running statistics.
std::vector<std::pair<std::string, Tensor*>> stored_tensors(ModelParams& model);

struct BatchItem {
  const Phrase* phrase;
  const ProposalSet* proposals;
};

struct Objective {
  ForwardMode mode = ForwardMode::kUnsupervised;
  double lambda = 1.0;
  AttentionNorm attention_norm = AttentionNorm::kAllPhrases;
};

struct BatchOptions {
  ModelParams* grads = nullptr;  // run the backward pass into this buffer
  bool batchnorm_train = true;   // batch statistics; otherwise running statistics
  // Receives updated running statistics from a train-mode batch norm.
  ModelParams* running_stats = nullptr;
  // Per item dL/d features, resized to match each proposal set.
  std::vector<Tensor>* feature_grads = nullptr;
};

struct BatchResult {
  std::vector<AttentionOutput> attention;
  std::optional<double> l_att;
  std::optional<double> l_rec;
  double objective = 0.0;
};

BatchResult run_batch(const ModelParams& model, std::span<const BatchItem> items,
                      const Objective& objective, const BatchOptions& options = {});

// One phrase against its proposals with batch norm on running statistics.
// Eval mode returns only the attention output.
BatchResult full_forward(const ModelParams& model, const Phrase& phrase,
                         const ProposalSet& proposals, ForwardMode mode, double lambda = 1.0);

// Raw attention scores of the grounding branch alone.
std::vector<double> ground_scores(const ModelParams& model, const Phrase& phrase,
                                  const ProposalSet& proposals);

// Phrase negative log-likelihood of the reconstruction branch under a given
// attention vector.
double reconstruct_with_attention(const ModelParams& model, std::span<const double> alpha,
                                  const ProposalSet& proposals,
                                  std::span<const std::int32_t> tokens);

}  // namespace grounder

#pragma once

// Grounding half of the model: a two-layer perceptron scores every proposal
// against the encoded phrase, a softmax turns scores into attention, and the
// box with maximum attention is the grounding.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grounder/box.hpp"
#include "grounder/tensor.hpp"

namespace grounder {

struct Phrase {
  std::vector<std::int32_t> tokens;
  std::int64_t sentence_id = 0;
  std::string phrase_type;  // empty when unlabeled
  std::optional<Box> gt_box;
  std::optional<std::size_t> gt_attention;

  bool operator==(const Phrase&) const = default;
};

// N candidate boxes of one image and one feature row per box.
struct ProposalSet {
  std::vector<Box> boxes;
  Tensor features;  // [N x d]

  std::size_t size() const { return boxes.size(); }
  std::size_t feature_width() const { return features.cols(); }
  // Throws DataError when the box count and feature rows disagree or N == 0.
  void validate() const;
  bool operator==(const ProposalSet&) const = default;
};

struct AttentionParams {
  Tensor w_h;  // [k x H]
  Tensor w_v;  // [k x d]
  Tensor b_1;  // [k]
  Tensor w_2;  // [1 x k]
  Tensor b_2;  // [1]

  static AttentionParams zeros(std::size_t hidden, std::size_t phrase_dim, std::size_t feature_dim);
  std::size_t hidden_dim() const { return w_h.rows(); }
};

struct AttentionOutput {
  std::vector<double> raw_scores;
  std::vector<double> weights;
  std::size_t selected = 0;
};

struct AttentionCache {
  std::vector<double> h;
  const Tensor* features = nullptr;  // borrowed; must outlive the cache
  Tensor pre_activation;             // [N x k]
};

// score_i = w_2 . relu(w_h h + w_v v_i + b_1) + b_2, with w_h h computed once.
std::vector<double> score_attention(const AttentionParams& params, std::span<const double> h,
                                    const Tensor& features, AttentionCache* cache = nullptr);
std::vector<double> score_attention(const AttentionParams& params, std::span<const double> h,
                                    const ProposalSet& proposals);

// Accumulates parameter gradients into `grad`, adds the phrase gradient into
// dh, and, when given, the per-proposal feature gradient into d_features.
void score_attention_backward(const AttentionParams& params, const AttentionCache& cache,
                              std::span<const double> d_scores, AttentionParams& grad,
                              std::span<double> dh, Tensor* d_features = nullptr);

// Softmax weights and the argmax proposal (lowest index on ties).
AttentionOutput normalize_and_select(std::span<const double> raw_scores);

// How the attention loss is averaged over a batch.
enum class AttentionNorm {
  kAllPhrases,      // divide by every phrase in the batch
  kSupervisedOnly,  // divide by the phrases that carry a target
};

// Mean over the batch of -log softmax(raw)[target]; phrases without a target
// contribute zero.
double attention_loss(const std::vector<std::vector<double>>& raw_scores,
                      const std::vector<std::optional<std::size_t>>& targets,
                      AttentionNorm norm = AttentionNorm::kAllPhrases);

// Gradient of attention_loss with respect to every raw score vector.
std::vector<std::vector<double>> attention_loss_backward(
    const std::vector<std::vector<double>>& raw_scores,
    const std::vector<std::optional<std::size_t>>& targets,
    AttentionNorm norm = AttentionNorm::kAllPhrases);

}  // namespace grounder

#include "grounder/attention.hpp"

#include "grounder/error.hpp"
#include "grounder/kernels.hpp"
#include "grounder/ops.hpp"

namespace grounder {

void ProposalSet::validate() const {
  if (boxes.empty()) throw DataError("proposal set is empty");
  if (features.rank() != 2 || features.rows() != boxes.size()) {
    throw DataError("proposal set has " + std::to_string(boxes.size()) + " boxes but features " +
                    shape_string(features.shape()));
  }
}

AttentionParams AttentionParams::zeros(std::size_t hidden, std::size_t phrase_dim,
                                       std::size_t feature_dim) {
  return {Tensor({hidden, phrase_dim}), Tensor({hidden, feature_dim}), Tensor({hidden}),
          Tensor({1, hidden}), Tensor({1})};
}

std::vector<double> score_attention(const AttentionParams& p, std::span<const double> h,
                                    const Tensor& features, AttentionCache* cache) {
  const std::size_t k = p.hidden_dim();
  if (h.size() != p.w_h.cols()) {
    throw DimensionError("score_attention: phrase width " + std::to_string(h.size()) +
                         " does not match w_h " + shape_string(p.w_h.shape()));
  }
  if (features.rank() != 2 || features.cols() != p.w_v.cols()) {
    throw DimensionError("score_attention: features " + shape_string(features.shape()) +
                         " do not match w_v " + shape_string(p.w_v.shape()));
  }
  const auto& kern = kernels::active();
  const std::size_t n = features.rows();

  std::vector<double> phrase_term(p.b_1.storage());
  kern.gemv(p.w_h.data(), k, h.size(), h.data(), phrase_term.data());

  Tensor pre({n, k});
  std::vector<double> scores(n);
  std::vector<double> act(k);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = pre.row(i);
    std::copy(phrase_term.begin(), phrase_term.end(), row.begin());
    kern.gemv(p.w_v.data(), k, features.cols(), features.row(i).data(), row.data());
    for (std::size_t j = 0; j < k; ++j) act[j] = row[j] > 0.0 ? row[j] : 0.0;
    scores[i] = kern.dot(p.w_2.data(), act.data(), k) + p.b_2[0];
  }
  if (cache != nullptr) {
    cache->h.assign(h.begin(), h.end());
    cache->features = &features;
    cache->pre_activation = std::move(pre);
  }
  return scores;
}

std::vector<double> score_attention(const AttentionParams& p, std::span<const double> h,
                                    const ProposalSet& proposals) {
  return score_attention(p, h, proposals.features);
}

void score_attention_backward(const AttentionParams& p, const AttentionCache& cache,
                              std::span<const double> d_scores, AttentionParams& grad,
                              std::span<double> dh, Tensor* d_features) {
  const std::size_t k = p.hidden_dim();
  const Tensor& features = *cache.features;
  const std::size_t n = features.rows(), d = features.cols();
  if (d_scores.size() != n) throw DimensionError("score_attention_backward: score count mismatch");
  if (dh.size() != cache.h.size()) throw DimensionError("score_attention_backward: dh width");
  const auto& kern = kernels::active();

  std::vector<double> dz_sum(k, 0.0), dz(k), act(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = d_scores[i];
    if (g == 0.0) continue;
    auto pre = cache.pre_activation.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const bool on = pre[j] > 0.0;
      act[j] = on ? pre[j] : 0.0;
      dz[j] = on ? g * p.w_2[j] : 0.0;
      dz_sum[j] += dz[j];
    }
    kern.axpy(g, act.data(), grad.w_2.data(), k);
    grad.b_2[0] += g;
    kern.ger(grad.w_v.data(), k, d, 1.0, dz.data(), features.row(i).data());
    if (d_features != nullptr) {
      kern.gemv_t(p.w_v.data(), k, d, dz.data(), d_features->row(i).data());
    }
  }
  kern.ger(grad.w_h.data(), k, cache.h.size(), 1.0, dz_sum.data(), cache.h.data());
  kern.axpy(1.0, dz_sum.data(), grad.b_1.data(), k);
  kern.gemv_t(p.w_h.data(), k, cache.h.size(), dz_sum.data(), dh.data());
}

AttentionOutput normalize_and_select(std::span<const double> raw_scores) {
  AttentionOutput out;
  out.raw_scores.assign(raw_scores.begin(), raw_scores.end());
  out.weights = ops::softmax_stable(raw_scores);
  out.selected = ops::argmax(out.weights);
  return out;
}

namespace {

double attention_denominator(const std::vector<std::optional<std::size_t>>& targets,
                             AttentionNorm norm) {
  if (norm == AttentionNorm::kAllPhrases) return static_cast<double>(targets.size());
  std::size_t supervised = 0;
  for (const auto& t : targets) supervised += t.has_value() ? 1 : 0;
  return static_cast<double>(supervised);
}

void check_batch(const std::vector<std::vector<double>>& raw,
                 const std::vector<std::optional<std::size_t>>& targets) {
  if (raw.size() != targets.size() || raw.empty()) {
    throw PreconditionError("attention_loss: need equal, non-empty score and target lists");
  }
}

}  // namespace

double attention_loss(const std::vector<std::vector<double>>& raw_scores,
                      const std::vector<std::optional<std::size_t>>& targets, AttentionNorm norm) {
  check_batch(raw_scores, targets);
  const double denom = attention_denominator(targets, norm);
  double total = 0.0;
  for (std::size_t b = 0; b < raw_scores.size(); ++b) {
    if (!targets[b]) continue;
    total += ops::log_likelihood_from_logits(raw_scores[b], *targets[b]);
  }
  return denom > 0.0 ? total / denom : 0.0;
}

std::vector<std::vector<double>> attention_loss_backward(
    const std::vector<std::vector<double>>& raw_scores,
    const std::vector<std::optional<std::size_t>>& targets, AttentionNorm norm) {
  check_batch(raw_scores, targets);
  const double denom = attention_denominator(targets, norm);
  std::vector<std::vector<double>> out;
  out.reserve(raw_scores.size());
  for (std::size_t b = 0; b < raw_scores.size(); ++b) {
    if (!targets[b]) {
      out.emplace_back(raw_scores[b].size(), 0.0);
      continue;
    }
    auto g = ops::log_likelihood_backward(raw_scores[b], *targets[b]);
    for (double& v : g) v /= denom;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace grounder

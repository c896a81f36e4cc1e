#include "grounder/reconstruction.hpp"

#include "grounder/error.hpp"
#include "grounder/kernels.hpp"
#include "grounder/ops.hpp"

namespace grounder {

RecEncoderParams RecEncoderParams::zeros(std::size_t out_dim, std::size_t feature_dim) {
  return {Tensor({out_dim, feature_dim}), Tensor({out_dim})};
}

DecoderParams DecoderParams::zeros(std::size_t input_dim, std::size_t hidden_dim,
                                   std::size_t vocab) {
  return {LstmWeights::zeros(input_dim, hidden_dim), Tensor({vocab, hidden_dim}),
          Tensor({vocab})};
}

std::vector<double> aggregate_visual(std::span<const double> alpha, const Tensor& features) {
  if (features.rank() != 2 || alpha.size() != features.rows()) {
    throw DimensionError("aggregate_visual: " + std::to_string(alpha.size()) +
                         " weights for features " + shape_string(features.shape()));
  }
  std::vector<double> v(features.cols(), 0.0);
  kernels::active().gemv_t(features.data(), features.rows(), features.cols(), alpha.data(),
                           v.data());
  return v;
}

void aggregate_visual_backward(std::span<const double> alpha, const Tensor& features,
                               std::span<const double> dv, std::span<double> d_alpha,
                               Tensor* d_features) {
  const auto& k = kernels::active();
  const std::size_t d = features.cols();
  for (std::size_t i = 0; i < features.rows(); ++i) {
    d_alpha[i] = k.dot(features.row(i).data(), dv.data(), d);
    if (d_features != nullptr) k.axpy(alpha[i], dv.data(), d_features->row(i).data(), d);
  }
}

std::vector<double> encode_visual(const RecEncoderParams& p, std::span<const double> v_att,
                                  VisualEncoderCache* cache) {
  if (v_att.size() != p.w_a.cols()) {
    throw DimensionError("encode_visual: input width " + std::to_string(v_att.size()) +
                         " does not match w_a " + shape_string(p.w_a.shape()));
  }
  std::vector<double> pre(p.b_a.storage());
  kernels::active().gemv(p.w_a.data(), p.w_a.rows(), p.w_a.cols(), v_att.data(), pre.data());
  std::vector<double> out(pre.size());
  for (std::size_t j = 0; j < pre.size(); ++j) out[j] = pre[j] > 0.0 ? pre[j] : 0.0;
  if (cache != nullptr) {
    cache->input.assign(v_att.begin(), v_att.end());
    cache->pre_activation = std::move(pre);
  }
  return out;
}

std::vector<double> encode_visual_backward(const RecEncoderParams& p,
                                           const VisualEncoderCache& cache,
                                           std::span<const double> d_out, RecEncoderParams& grad) {
  const auto& k = kernels::active();
  const std::size_t e = p.w_a.rows(), d = p.w_a.cols();
  std::vector<double> dz(e);
  for (std::size_t j = 0; j < e; ++j) dz[j] = cache.pre_activation[j] > 0.0 ? d_out[j] : 0.0;
  k.ger(grad.w_a.data(), e, d, 1.0, dz.data(), cache.input.data());
  k.axpy(1.0, dz.data(), grad.b_a.data(), e);
  std::vector<double> dv(d, 0.0);
  k.gemv_t(p.w_a.data(), e, d, dz.data(), dv.data());
  return dv;
}

namespace {

std::vector<double> project(const DecoderParams& p, std::span<const double> h) {
  std::vector<double> logits(p.b_out.storage());
  kernels::active().gemv(p.w_out.data(), p.w_out.rows(), p.w_out.cols(), h.data(), logits.data());
  return logits;
}

void check_decoder(const DecoderParams& p, const EmbeddingTable& emb, std::size_t code_width) {
  if (code_width != p.lstm.input_dim() || emb.dim() != p.lstm.input_dim()) {
    throw DimensionError("decoder: visual code width " + std::to_string(code_width) +
                         " and embedding width " + std::to_string(emb.dim()) +
                         " must equal decoder input width " +
                         std::to_string(p.lstm.input_dim()));
  }
}

}  // namespace

std::vector<std::vector<double>> decode_phrase_logits(const DecoderParams& p,
                                                      const EmbeddingTable& emb,
                                                      std::span<const double> visual_code,
                                                      std::span<const std::int32_t> tokens,
                                                      DecoderCache* cache) {
  if (tokens.empty()) throw PreconditionError("decode_phrase_logits: empty phrase");
  check_decoder(p, emb, visual_code.size());
  for (std::int32_t t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= p.vocab_size()) {
      throw IndexError("decode_phrase_logits: token " + std::to_string(t) +
                       " outside vocabulary of " + std::to_string(p.vocab_size()));
    }
  }
  std::vector<std::vector<double>> inputs;
  inputs.reserve(tokens.size() + 1);
  inputs.emplace_back(visual_code.begin(), visual_code.end());
  for (std::int32_t t : tokens) {
    auto row = emb.lookup(t);
    inputs.emplace_back(row.begin(), row.end());
  }
  SequenceCache local;
  auto hidden = run_sequence(p.lstm, inputs, cache ? &cache->sequence : &local);
  std::vector<std::vector<double>> logits;
  logits.reserve(hidden.size());
  for (const auto& h : hidden) logits.push_back(project(p, h));
  if (cache != nullptr) {
    cache->hidden = std::move(hidden);
    cache->inputs.assign(tokens.begin(), tokens.end());
  }
  return logits;
}

std::vector<double> decode_phrase_backward(const DecoderParams& p, const EmbeddingTable& emb,
                                           const DecoderCache& cache,
                                           const std::vector<std::vector<double>>& d_logits,
                                           DecoderParams& grad, EmbeddingTable& embedding_grad) {
  (void)emb;
  const auto& k = kernels::active();
  const std::size_t steps = cache.hidden.size();
  if (d_logits.size() != steps) throw DimensionError("decode_phrase_backward: step mismatch");
  const std::size_t v = p.vocab_size(), hd = p.lstm.hidden_dim();
  std::vector<std::vector<double>> dh(steps, std::vector<double>(hd, 0.0));
  for (std::size_t t = 0; t < steps; ++t) {
    k.ger(grad.w_out.data(), v, hd, 1.0, d_logits[t].data(), cache.hidden[t].data());
    k.axpy(1.0, d_logits[t].data(), grad.b_out.data(), v);
    k.gemv_t(p.w_out.data(), v, hd, d_logits[t].data(), dh[t].data());
  }
  auto dx = run_sequence_backward(p.lstm, cache.sequence, dh, grad.lstm);
  for (std::size_t t = 1; t < steps; ++t) embedding_backward(embedding_grad, cache.inputs[t - 1], dx[t]);
  return std::move(dx[0]);
}

std::vector<std::int32_t> generate_phrase(const DecoderParams& p, const EmbeddingTable& emb,
                                          std::span<const double> visual_code,
                                          std::size_t max_length) {
  check_decoder(p, emb, visual_code.size());
  const std::size_t hd = p.lstm.hidden_dim();
  LstmState state{std::vector<double>(hd), std::vector<double>(hd)};
  std::vector<double> input(visual_code.begin(), visual_code.end());
  std::vector<std::int32_t> out;
  while (out.size() < max_length) {
    state = lstm_step(p.lstm, input, state.h, state.c);
    const auto next = static_cast<std::int32_t>(ops::argmax(project(p, state.h)));
    if (next == token::kEos) break;
    out.push_back(next);
    auto row = emb.lookup(next);
    input.assign(row.begin(), row.end());
  }
  return out;
}

std::vector<std::int32_t> with_eos(std::span<const std::int32_t> tokens) {
  std::vector<std::int32_t> out(tokens.begin(), tokens.end());
  out.push_back(token::kEos);
  return out;
}

double phrase_nll(const std::vector<std::vector<double>>& step_logits,
                  std::span<const std::int32_t> targets) {
  if (step_logits.size() != targets.size()) {
    throw PreconditionError("phrase_nll: " + std::to_string(step_logits.size()) +
                            " logit steps for " + std::to_string(targets.size()) + " targets");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    total += ops::log_likelihood_from_logits(step_logits[t], static_cast<std::size_t>(targets[t]));
  }
  return total;
}

std::vector<std::vector<double>> phrase_nll_backward(
    const std::vector<std::vector<double>>& step_logits, std::span<const std::int32_t> targets,
    double scale) {
  if (step_logits.size() != targets.size()) {
    throw PreconditionError("phrase_nll_backward: logits and targets are misaligned");
  }
  std::vector<std::vector<double>> out;
  out.reserve(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    auto g = ops::log_likelihood_backward(step_logits[t], static_cast<std::size_t>(targets[t]));
    for (double& v : g) v *= scale;
    out.push_back(std::move(g));
  }
  return out;
}

double reconstruction_loss(const std::vector<std::vector<std::vector<double>>>& step_logits,
                           const std::vector<std::vector<std::int32_t>>& targets,
                           std::size_t batch_size) {
  if (step_logits.size() != targets.size() || batch_size == 0) {
    throw PreconditionError("reconstruction_loss: logits and targets are misaligned");
  }
  double total = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) total += phrase_nll(step_logits[b], targets[b]);
  return total / static_cast<double>(batch_size);
}

double combined_loss(double l_att, double l_rec, double lambda) {
  if (!(lambda >= 0.0)) throw PreconditionError("combined_loss: lambda must be non-negative");
  return lambda * l_att + l_rec;
}

}  // namespace grounder

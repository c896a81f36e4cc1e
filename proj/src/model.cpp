#include "grounder/model.hpp"

#include <random>

#include "grounder/error.hpp"
#include "grounder/kernels.hpp"
#include "grounder/ops.hpp"
#include "grounder/parallel.hpp"

namespace grounder {

ForwardMode parse_mode(std::string_view name) {
  if (name == "unsupervised" || name == "unsup") return ForwardMode::kUnsupervised;
  if (name == "semi" || name == "semi-supervised") return ForwardMode::kSemiSupervised;
  if (name == "full" || name == "supervised" || name == "fully-supervised") {
    return ForwardMode::kFullySupervised;
  }
  if (name == "eval") return ForwardMode::kEval;
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

std::string to_string(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::kUnsupervised: return "unsupervised";
    case ForwardMode::kSemiSupervised: return "semi";
    case ForwardMode::kFullySupervised: return "full";
    case ForwardMode::kEval: return "eval";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(feature_width, "feature_width");
  positive(embed_dim, "embed_dim");
  positive(hidden_dim, "hidden_dim");
  positive(attention_dim, "attention_dim");
  positive(decoder_embed_dim, "decoder_embed_dim");
  positive(decoder_hidden_dim, "decoder_hidden_dim");
  if (vocab_size <= token::kReserved) {
    throw ConfigError("model: vocab_size must exceed the reserved tokens");
  }
  if (share_embeddings && embed_dim != decoder_embed_dim) {
    throw ConfigError("model: share_embeddings needs embed_dim == decoder_embed_dim");
  }
  if (!(lstm_init_range > 0.0)) throw ConfigError("model: lstm_init_range must be positive");
}

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const auto& c = config;
  auto other = [&](Shape shape, std::size_t fan_in, std::size_t fan_out) {
    return init_tensor(shape, c.init, fan_in, fan_out, rng);
  };

  ModelParams m;
  m.config = c;
  m.encoder_embedding.weights = other({c.vocab_size, c.embed_dim}, c.vocab_size, c.embed_dim);
  m.encoder = init_lstm(c.embed_dim, c.hidden_dim, rng, c.lstm_init_range, c.forget_bias);
  m.phrase_norm = BatchNormParams::identity(c.hidden_dim);
  m.visual_norm = BatchNormParams::identity(c.feature_width);

  m.attention = AttentionParams::zeros(c.attention_dim, c.hidden_dim, c.feature_width);
  m.attention.w_h = other(m.attention.w_h.shape(), c.hidden_dim, c.attention_dim);
  m.attention.w_v = other(m.attention.w_v.shape(), c.feature_width, c.attention_dim);
  m.attention.w_2 = other(m.attention.w_2.shape(), c.attention_dim, 1);

  m.visual_encoder = RecEncoderParams::zeros(c.decoder_embed_dim, c.feature_width);
  m.visual_encoder.w_a = other(m.visual_encoder.w_a.shape(), c.feature_width, c.decoder_embed_dim);

  if (!c.share_embeddings) {
    m.decoder_embedding.weights =
        other({c.vocab_size, c.decoder_embed_dim}, c.vocab_size, c.decoder_embed_dim);
  }
  m.decoder = DecoderParams::zeros(c.decoder_embed_dim, c.decoder_hidden_dim, c.vocab_size);
  m.decoder.lstm =
      init_lstm(c.decoder_embed_dim, c.decoder_hidden_dim, rng, c.lstm_init_range, c.forget_bias);
  m.decoder.w_out = other(m.decoder.w_out.shape(), c.decoder_hidden_dim, c.vocab_size);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> stored_tensors(ModelParams& m) {
  std::vector<std::pair<std::string, Tensor*>> out{
      {"encoder_embedding", &m.encoder_embedding.weights},
      {"encoder.w_x", &m.encoder.w_x},
      {"encoder.w_h", &m.encoder.w_h},
      {"encoder.bias", &m.encoder.bias},
      {"phrase_norm.scale", &m.phrase_norm.scale},
      {"phrase_norm.shift", &m.phrase_norm.shift},
      {"phrase_norm.running_mean", &m.phrase_norm.running_mean},
      {"phrase_norm.running_var", &m.phrase_norm.running_var},
      {"visual_norm.scale", &m.visual_norm.scale},
      {"visual_norm.shift", &m.visual_norm.shift},
      {"visual_norm.running_mean", &m.visual_norm.running_mean},
      {"visual_norm.running_var", &m.visual_norm.running_var},
      {"attention.w_h", &m.attention.w_h},
      {"attention.w_v", &m.attention.w_v},
      {"attention.b_1", &m.attention.b_1},
      {"attention.w_2", &m.attention.w_2},
      {"attention.b_2", &m.attention.b_2},
      {"visual_encoder.w_a", &m.visual_encoder.w_a},
      {"visual_encoder.b_a", &m.visual_encoder.b_a},
  };
  if (!m.config.share_embeddings) out.emplace_back("decoder_embedding", &m.decoder_embedding.weights);
  out.emplace_back("decoder.w_x", &m.decoder.lstm.w_x);
  out.emplace_back("decoder.w_h", &m.decoder.lstm.w_h);
  out.emplace_back("decoder.bias", &m.decoder.lstm.bias);
  out.emplace_back("decoder.w_out", &m.decoder.w_out);
  out.emplace_back("decoder.b_out", &m.decoder.b_out);
  return out;
}

std::vector<ParamRef> learnable_params(ModelParams& m) {
  std::vector<ParamRef> out{
      {"encoder_embedding", "embedding", &m.encoder_embedding.weights, true},
      {"encoder.w_x", "encoder_lstm", &m.encoder.w_x, true},
      {"encoder.w_h", "encoder_lstm", &m.encoder.w_h, true},
      {"encoder.bias", "encoder_lstm", &m.encoder.bias, false},
  };
  if (m.config.batchnorm) {
    out.push_back({"phrase_norm.scale", "batchnorm", &m.phrase_norm.scale, false});
    out.push_back({"phrase_norm.shift", "batchnorm", &m.phrase_norm.shift, false});
    out.push_back({"visual_norm.scale", "batchnorm", &m.visual_norm.scale, false});
    out.push_back({"visual_norm.shift", "batchnorm", &m.visual_norm.shift, false});
  }
  out.push_back({"attention.w_h", "attention", &m.attention.w_h, true});
  out.push_back({"attention.w_v", "attention", &m.attention.w_v, true});
  out.push_back({"attention.b_1", "attention", &m.attention.b_1, false});
  out.push_back({"attention.w_2", "attention", &m.attention.w_2, true});
  out.push_back({"attention.b_2", "attention", &m.attention.b_2, false});
  out.push_back({"visual_encoder.w_a", "visual_encoder", &m.visual_encoder.w_a, true});
  out.push_back({"visual_encoder.b_a", "visual_encoder", &m.visual_encoder.b_a, false});
  if (!m.config.share_embeddings) {
    out.push_back({"decoder_embedding", "embedding", &m.decoder_embedding.weights, true});
  }
  out.push_back({"decoder.w_x", "decoder", &m.decoder.lstm.w_x, true});
  out.push_back({"decoder.w_h", "decoder", &m.decoder.lstm.w_h, true});
  out.push_back({"decoder.bias", "decoder", &m.decoder.lstm.bias, false});
  out.push_back({"decoder.w_out", "decoder", &m.decoder.w_out, true});
  out.push_back({"decoder.b_out", "decoder", &m.decoder.b_out, false});
  return out;
}

ModelParams zeros_like(const ModelParams& model) {
  ModelParams z = model;
  for (auto& [name, t] : stored_tensors(z)) t->fill(0.0);
  return z;
}

namespace {

constexpr std::size_t kChunk = 8;

void add_into(ModelParams& dst, ModelParams& src) {
  auto d = learnable_params(dst);
  auto s = learnable_params(src);
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < d.size(); ++i) {
    k.axpy(1.0, s[i].tensor->data(), d[i].tensor->data(), d[i].tensor->size());
  }
}

struct ItemState {
  // grounding
  SequenceCache encoder_cache;
  std::vector<double> h;
  std::vector<double> h_att;  // after optional batch norm
  Tensor normed_features;     // used when batch norm is on
  AttentionCache attention_cache;
  AttentionOutput attention;
  std::optional<std::size_t> target;
  // reconstruction
  VisualEncoderCache visual_cache;
  DecoderCache decoder_cache;
  std::vector<std::vector<double>> logits;
  std::vector<std::int32_t> targets;
  double nll = 0.0;
  // backward
  std::vector<double> dh_att;
  std::vector<double> dh;
  Tensor d_att_features;
};

bool uses_attention_loss(ForwardMode m) {
  return m == ForwardMode::kSemiSupervised || m == ForwardMode::kFullySupervised;
}

bool uses_reconstruction(ForwardMode m) {
  return m == ForwardMode::kSemiSupervised || m == ForwardMode::kUnsupervised;
}

std::vector<std::vector<double>> embed(const EmbeddingTable& table,
                                       std::span<const std::int32_t> tokens) {
  if (tokens.empty()) throw PreconditionError("phrase has no tokens");
  std::vector<std::vector<double>> out;
  out.reserve(tokens.size());
  for (std::int32_t t : tokens) {
    auto row = table.lookup(t);
    out.emplace_back(row.begin(), row.end());
  }
  return out;
}

}  // namespace

BatchResult run_batch(const ModelParams& model, std::span<const BatchItem> items,
                      const Objective& objective, const BatchOptions& options) {
  if (items.empty()) throw PreconditionError("run_batch: empty batch");
  const ModelConfig& cfg = model.config;
  const std::size_t batch = items.size();
  const bool with_att = uses_attention_loss(objective.mode);
  const bool with_rec = uses_reconstruction(objective.mode);
  const bool backward = options.grads != nullptr && objective.mode != ForwardMode::kEval;

  for (const BatchItem& it : items) {
    it.proposals->validate();
    if (it.proposals->feature_width() != cfg.feature_width) {
      throw DimensionError("proposal features have width " +
                           std::to_string(it.proposals->feature_width()) + ", model expects " +
                           std::to_string(cfg.feature_width));
    }
    if (it.phrase->gt_attention && *it.phrase->gt_attention >= it.proposals->size()) {
      throw IndexError("gt_attention " + std::to_string(*it.phrase->gt_attention) +
                       " outside proposal set of " + std::to_string(it.proposals->size()));
    }
  }

  std::vector<ItemState> st(batch);

  // Phrase encoding.
  parallel_for(batch, [&](std::size_t b) {
    auto inputs = embed(model.encoder_embedding, items[b].phrase->tokens);
    st[b].h = encode_sequence(model.encoder, inputs, backward ? &st[b].encoder_cache : nullptr);
  });

  // Optional batch norm on h and on every proposal feature row.
  BatchNormCache phrase_bn_cache, visual_bn_cache;
  std::vector<std::size_t> row_offset(batch + 1, 0);
  if (cfg.batchnorm) {
    const bool train = options.batchnorm_train;
    Tensor hs({batch, cfg.hidden_dim});
    for (std::size_t b = 0; b < batch; ++b) std::copy(st[b].h.begin(), st[b].h.end(), hs.row(b).begin());
    for (std::size_t b = 0; b < batch; ++b) row_offset[b + 1] = row_offset[b] + items[b].proposals->size();
    Tensor vs({row_offset[batch], cfg.feature_width});
    for (std::size_t b = 0; b < batch; ++b) {
      const Tensor& f = items[b].proposals->features;
      std::copy(f.storage().begin(), f.storage().end(), vs.row(row_offset[b]).begin());
    }
    Tensor hn, vn;
    if (train) {
      BatchNormParams pn = model.phrase_norm, vnp = model.visual_norm;
      hn = batchnorm_forward(pn, hs, BatchNormMode::kTrain, &phrase_bn_cache, true);
      vn = batchnorm_forward(vnp, vs, BatchNormMode::kTrain, &visual_bn_cache, true);
      if (options.running_stats != nullptr) {
        options.running_stats->phrase_norm.running_mean = pn.running_mean;
        options.running_stats->phrase_norm.running_var = pn.running_var;
        options.running_stats->visual_norm.running_mean = vnp.running_mean;
        options.running_stats->visual_norm.running_var = vnp.running_var;
      }
    } else {
      hn = batchnorm_infer(model.phrase_norm, hs, &phrase_bn_cache);
      vn = batchnorm_infer(model.visual_norm, vs, &visual_bn_cache);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      auto r = hn.row(b);
      st[b].h_att.assign(r.begin(), r.end());
      const std::size_t n = items[b].proposals->size();
      std::vector<double> rows(vn.data() + row_offset[b] * cfg.feature_width,
                               vn.data() + (row_offset[b] + n) * cfg.feature_width);
      st[b].normed_features = Tensor({n, cfg.feature_width}, std::move(rows));
    }
  } else {
    for (auto& s : st) s.h_att = s.h;
  }

  // Attention, then reconstruction under that attention.
  parallel_for(batch, [&](std::size_t b) {
    ItemState& s = st[b];
    const Tensor& att_features =
        cfg.batchnorm ? s.normed_features : items[b].proposals->features;
    auto scores = score_attention(model.attention, s.h_att, att_features,
                                  backward ? &s.attention_cache : nullptr);
    s.attention = normalize_and_select(scores);
    s.target = items[b].phrase->gt_attention;
    if (!with_rec) return;
    auto v_att = aggregate_visual(s.attention.weights, items[b].proposals->features);
    auto code = encode_visual(model.visual_encoder, v_att, &s.visual_cache);
    s.logits = decode_phrase_logits(model.decoder, model.decoder_table(), code,
                                    items[b].phrase->tokens, backward ? &s.decoder_cache : nullptr);
    s.targets = with_eos(items[b].phrase->tokens);
    s.nll = phrase_nll(s.logits, s.targets);
  });

  BatchResult result;
  result.attention.reserve(batch);
  for (auto& s : st) result.attention.push_back(s.attention);
  if (objective.mode == ForwardMode::kEval) return result;

  std::vector<std::vector<double>> raw(batch);
  std::vector<std::optional<std::size_t>> targets(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    raw[b] = st[b].attention.raw_scores;
    targets[b] = st[b].target;
  }
  if (with_att) result.l_att = attention_loss(raw, targets, objective.attention_norm);
  if (with_rec) {
    double total = 0.0;
    for (const auto& s : st) total += s.nll;
    result.l_rec = total / static_cast<double>(batch);
  }
  switch (objective.mode) {
    case ForwardMode::kUnsupervised: result.objective = *result.l_rec; break;
    case ForwardMode::kSemiSupervised:
      result.objective = combined_loss(*result.l_att, *result.l_rec, objective.lambda);
      break;
    case ForwardMode::kFullySupervised: result.objective = *result.l_att; break;
    case ForwardMode::kEval: break;
  }
  if (!backward) return result;

  // ---- backward ----------------------------------------------------------
  std::vector<std::vector<double>> d_scores(batch);
  if (with_att) {
    d_scores = attention_loss_backward(raw, targets, objective.attention_norm);
    const double coeff = objective.mode == ForwardMode::kSemiSupervised ? objective.lambda : 1.0;
    for (auto& g : d_scores) {
      for (double& v : g) v *= coeff;
    }
  } else {
    for (std::size_t b = 0; b < batch; ++b) d_scores[b].assign(raw[b].size(), 0.0);
  }

  if (options.feature_grads != nullptr) {
    options.feature_grads->resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      (*options.feature_grads)[b] = Tensor(items[b].proposals->features.shape());
    }
  }

  const std::size_t chunks = (batch + kChunk - 1) / kChunk;
  std::vector<ModelParams> chunk_grads(chunks);
  parallel_for(chunks, [&](std::size_t c) { chunk_grads[c] = zeros_like(model); });

  const double rec_scale = 1.0 / static_cast<double>(batch);
  parallel_for(chunks, [&](std::size_t c) {
    ModelParams& g = chunk_grads[c];
    for (std::size_t b = c * kChunk; b < std::min(batch, (c + 1) * kChunk); ++b) {
      ItemState& s = st[b];
      const Tensor& features = items[b].proposals->features;
      Tensor* raw_feature_grad = options.feature_grads ? &(*options.feature_grads)[b] : nullptr;
      if (with_rec) {
        auto d_logits = phrase_nll_backward(s.logits, s.targets, rec_scale);
        auto d_code = decode_phrase_backward(model.decoder, model.decoder_table(), s.decoder_cache,
                                             d_logits, g.decoder, g.decoder_table());
        auto dv = encode_visual_backward(model.visual_encoder, s.visual_cache, d_code,
                                         g.visual_encoder);
        std::vector<double> d_alpha(features.rows());
        aggregate_visual_backward(s.attention.weights, features, dv, d_alpha, raw_feature_grad);
        auto d_raw = ops::softmax_backward(s.attention.weights, d_alpha);
        for (std::size_t i = 0; i < d_raw.size(); ++i) d_scores[b][i] += d_raw[i];
      }
      s.dh_att.assign(cfg.hidden_dim, 0.0);
      Tensor* att_feature_grad = raw_feature_grad;
      if (cfg.batchnorm) {
        s.d_att_features = Tensor(features.shape());
        att_feature_grad = &s.d_att_features;
      }
      score_attention_backward(model.attention, s.attention_cache, d_scores[b], g.attention,
                               s.dh_att, att_feature_grad);
    }
  });

  ModelParams bn_grads;
  if (cfg.batchnorm) {
    bn_grads = zeros_like(model);
    Tensor dhn({batch, cfg.hidden_dim});
    for (std::size_t b = 0; b < batch; ++b) std::copy(st[b].dh_att.begin(), st[b].dh_att.end(), dhn.row(b).begin());
    Tensor dh = batchnorm_backward(model.phrase_norm, phrase_bn_cache, dhn, bn_grads.phrase_norm);
    for (std::size_t b = 0; b < batch; ++b) {
      auto r = dh.row(b);
      st[b].dh.assign(r.begin(), r.end());
    }
    Tensor dvn({row_offset[batch], cfg.feature_width});
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& src = st[b].d_att_features.storage();
      std::copy(src.begin(), src.end(), dvn.row(row_offset[b]).begin());
    }
    Tensor dv = batchnorm_backward(model.visual_norm, visual_bn_cache, dvn, bn_grads.visual_norm);
    if (options.feature_grads != nullptr) {
      for (std::size_t b = 0; b < batch; ++b) {
        Tensor& fg = (*options.feature_grads)[b];
        const double* src = dv.data() + row_offset[b] * cfg.feature_width;
        kernels::active().axpy(1.0, src, fg.data(), fg.size());
      }
    }
  } else {
    for (auto& s : st) s.dh = s.dh_att;
  }

  parallel_for(chunks, [&](std::size_t c) {
    ModelParams& g = chunk_grads[c];
    for (std::size_t b = c * kChunk; b < std::min(batch, (c + 1) * kChunk); ++b) {
      auto dx = encode_sequence_backward(model.encoder, st[b].encoder_cache, st[b].dh, g.encoder);
      const auto& tokens = items[b].phrase->tokens;
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        embedding_backward(g.encoder_embedding, tokens[t], dx[t]);
      }
    }
  });

  for (auto& g : chunk_grads) add_into(*options.grads, g);
  if (cfg.batchnorm) add_into(*options.grads, bn_grads);
  return result;
}

BatchResult full_forward(const ModelParams& model, const Phrase& phrase,
                         const ProposalSet& proposals, ForwardMode mode, double lambda) {
  const BatchItem item{&phrase, &proposals};
  Objective objective{mode, lambda, AttentionNorm::kAllPhrases};
  BatchOptions options;
  options.batchnorm_train = false;
  return run_batch(model, std::span<const BatchItem>(&item, 1), objective, options);
}

std::vector<double> ground_scores(const ModelParams& model, const Phrase& phrase,
                                  const ProposalSet& proposals) {
  return full_forward(model, phrase, proposals, ForwardMode::kEval).attention.front().raw_scores;
}

double reconstruct_with_attention(const ModelParams& model, std::span<const double> alpha,
                                  const ProposalSet& proposals,
                                  std::span<const std::int32_t> tokens) {
  auto v_att = aggregate_visual(alpha, proposals.features);
  auto code = encode_visual(model.visual_encoder, v_att);
  auto logits = decode_phrase_logits(model.decoder, model.decoder_table(), code, tokens);
  return phrase_nll(logits, with_eos(tokens));
}

}  // namespace grounder

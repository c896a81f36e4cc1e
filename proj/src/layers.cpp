#include "grounder/layers.hpp"

#include <cmath>

#include "grounder/error.hpp"
#include "grounder/kernels.hpp"

namespace grounder {

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "uniform") return InitScheme::kUniform;
  if (name == "xavier") return InitScheme::kXavier;
  if (name == "msra") return InitScheme::kMsra;
  throw ConfigError("unknown init scheme '" + std::string(name) + "'");
}

std::string to_string(InitScheme scheme) {
  switch (scheme) {
    case InitScheme::kUniform: return "uniform";
    case InitScheme::kXavier: return "xavier";
    case InitScheme::kMsra: return "msra";
  }
  return "?";
}

Tensor init_tensor(const Shape& shape, InitScheme scheme, std::size_t fan_in,
                   std::size_t fan_out, std::mt19937_64& rng, double uniform_range) {
  Tensor t(shape);
  switch (scheme) {
    case InitScheme::kUniform: {
      std::uniform_real_distribution<double> dist(-uniform_range, uniform_range);
      for (double& v : t.values()) v = dist(rng);
      break;
    }
    case InitScheme::kXavier: {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-a, a);
      for (double& v : t.values()) v = dist(rng);
      break;
    }
    case InitScheme::kMsra: {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (double& v : t.values()) v = dist(rng);
      break;
    }
  }
  return t;
}

Tensor init_params(const Shape& shape, InitScheme scheme, std::uint64_t seed,
                   double uniform_range) {
  if (shape.empty()) throw DimensionError("init_params: empty shape");
  std::mt19937_64 rng(seed);
  const std::size_t fan_in = shape[0];
  const std::size_t fan_out = shape.size() > 1 ? shape_numel(shape) / shape[0] : shape[0];
  return init_tensor(shape, scheme, fan_in, fan_out, rng, uniform_range);
}

std::span<const double> EmbeddingTable::lookup(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(vocab_size()));
  }
  return weights.row(static_cast<std::size_t>(id));
}

void embedding_backward(EmbeddingTable& grad, std::int32_t id, std::span<const double> g) {
  if (id < 0 || static_cast<std::size_t>(id) >= grad.vocab_size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }
  auto row = grad.weights.row(static_cast<std::size_t>(id));
  kernels::active().axpy(1.0, g.data(), row.data(), row.size());
}

// ---------------------------------------------------------------------------

LstmWeights LstmWeights::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  return {Tensor({4 * hidden_dim, input_dim}), Tensor({4 * hidden_dim, hidden_dim}),
          Tensor({4 * hidden_dim})};
}

LstmWeights init_lstm(std::size_t input_dim, std::size_t hidden_dim, std::mt19937_64& rng,
                      double uniform_range, double forget_bias) {
  LstmWeights w;
  w.w_x = init_tensor({4 * hidden_dim, input_dim}, InitScheme::kUniform, input_dim,
                      4 * hidden_dim, rng, uniform_range);
  w.w_h = init_tensor({4 * hidden_dim, hidden_dim}, InitScheme::kUniform, hidden_dim,
                      4 * hidden_dim, rng, uniform_range);
  w.bias = Tensor({4 * hidden_dim});
  for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) w.bias[j] = forget_bias;
  return w;
}

namespace {

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void check_lstm_dims(const LstmWeights& w, std::size_t x, std::size_t h, std::size_t c) {
  const std::size_t hd = w.hidden_dim();
  if (x != w.input_dim() || h != hd || c != hd) {
    throw DimensionError("lstm_step: expected x[" + std::to_string(w.input_dim()) + "], h[" +
                         std::to_string(hd) + "], c[" + std::to_string(hd) + "], got x[" +
                         std::to_string(x) + "], h[" + std::to_string(h) + "], c[" +
                         std::to_string(c) + "]");
  }
}

}  // namespace

LstmState lstm_step(const LstmWeights& w, std::span<const double> x, std::span<const double> h_prev,
                    std::span<const double> c_prev, LstmStepCache* cache) {
  check_lstm_dims(w, x.size(), h_prev.size(), c_prev.size());
  const std::size_t hd = w.hidden_dim();
  const auto& k = kernels::active();

  std::vector<double> pre(w.bias.storage());
  k.gemv(w.w_x.data(), 4 * hd, w.input_dim(), x.data(), pre.data());
  k.gemv(w.w_h.data(), 4 * hd, hd, h_prev.data(), pre.data());

  for (std::size_t j = 0; j < 3 * hd; ++j) pre[j] = sigmoid(pre[j]);
  for (std::size_t j = 3 * hd; j < 4 * hd; ++j) pre[j] = std::tanh(pre[j]);

  LstmState out{std::vector<double>(hd), std::vector<double>(hd)};
  std::vector<double> tanh_c(hd);
  for (std::size_t j = 0; j < hd; ++j) {
    const double i = pre[j], f = pre[hd + j], o = pre[2 * hd + j], g = pre[3 * hd + j];
    out.c[j] = f * c_prev[j] + i * g;
    tanh_c[j] = std::tanh(out.c[j]);
    out.h[j] = o * tanh_c[j];
  }
  if (cache != nullptr) {
    cache->x.assign(x.begin(), x.end());
    cache->h_prev.assign(h_prev.begin(), h_prev.end());
    cache->c_prev.assign(c_prev.begin(), c_prev.end());
    cache->gates = std::move(pre);
    cache->tanh_c = std::move(tanh_c);
  }
  return out;
}

LstmStepGrad lstm_step_backward(const LstmWeights& w, const LstmStepCache& cache,
                                std::span<const double> dh, std::span<const double> dc,
                                LstmWeights& grad) {
  const std::size_t hd = w.hidden_dim();
  if (dh.size() != hd || dc.size() != hd) throw DimensionError("lstm_step_backward: bad dh/dc");
  const auto& k = kernels::active();
  const auto& gt = cache.gates;

  std::vector<double> dpre(4 * hd);
  LstmStepGrad out{std::vector<double>(w.input_dim()), std::vector<double>(hd),
                   std::vector<double>(hd)};
  for (std::size_t j = 0; j < hd; ++j) {
    const double i = gt[j], f = gt[hd + j], o = gt[2 * hd + j], g = gt[3 * hd + j];
    const double tc = cache.tanh_c[j];
    const double d_o = dh[j] * tc;
    const double d_c = dc[j] + dh[j] * o * (1.0 - tc * tc);
    dpre[j] = d_c * g * i * (1.0 - i);
    dpre[hd + j] = d_c * cache.c_prev[j] * f * (1.0 - f);
    dpre[2 * hd + j] = d_o * o * (1.0 - o);
    dpre[3 * hd + j] = d_c * i * (1.0 - g * g);
    out.dc_prev[j] = d_c * f;
  }
  k.ger(grad.w_x.data(), 4 * hd, w.input_dim(), 1.0, dpre.data(), cache.x.data());
  k.ger(grad.w_h.data(), 4 * hd, hd, 1.0, dpre.data(), cache.h_prev.data());
  k.axpy(1.0, dpre.data(), grad.bias.data(), 4 * hd);
  k.gemv_t(w.w_x.data(), 4 * hd, w.input_dim(), dpre.data(), out.dx.data());
  k.gemv_t(w.w_h.data(), 4 * hd, hd, dpre.data(), out.dh_prev.data());
  return out;
}

std::vector<std::vector<double>> run_sequence(const LstmWeights& w,
                                              const std::vector<std::vector<double>>& inputs,
                                              SequenceCache* cache) {
  const std::size_t hd = w.hidden_dim();
  LstmState state{std::vector<double>(hd), std::vector<double>(hd)};
  std::vector<std::vector<double>> hs;
  hs.reserve(inputs.size());
  if (cache != nullptr) cache->steps.assign(inputs.size(), {});
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    state = lstm_step(w, inputs[t], state.h, state.c, cache ? &cache->steps[t] : nullptr);
    hs.push_back(state.h);
  }
  return hs;
}

std::vector<std::vector<double>> run_sequence_backward(
    const LstmWeights& w, const SequenceCache& cache,
    const std::vector<std::vector<double>>& dh_per_step, LstmWeights& grad) {
  const std::size_t steps = cache.steps.size();
  if (dh_per_step.size() != steps) throw DimensionError("run_sequence_backward: step mismatch");
  const std::size_t hd = w.hidden_dim();
  std::vector<double> dh(hd), dc(hd);
  std::vector<std::vector<double>> dx(steps);
  for (std::size_t t = steps; t-- > 0;) {
    const auto& up = dh_per_step[t];
    if (up.size() != hd) throw DimensionError("run_sequence_backward: bad dh width");
    for (std::size_t j = 0; j < hd; ++j) dh[j] += up[j];
    LstmStepGrad g = lstm_step_backward(w, cache.steps[t], dh, dc, grad);
    dx[t] = std::move(g.dx);
    dh = std::move(g.dh_prev);
    dc = std::move(g.dc_prev);
  }
  return dx;
}

std::vector<double> encode_sequence(const LstmWeights& w,
                                    const std::vector<std::vector<double>>& inputs,
                                    SequenceCache* cache) {
  if (inputs.empty()) throw PreconditionError("encode_sequence: empty sequence");
  auto hs = run_sequence(w, inputs, cache);
  return std::move(hs.back());
}

std::vector<std::vector<double>> encode_sequence_backward(const LstmWeights& w,
                                                          const SequenceCache& cache,
                                                          std::span<const double> dh_final,
                                                          LstmWeights& grad) {
  if (cache.steps.empty()) throw PreconditionError("encode_sequence_backward: empty cache");
  std::vector<std::vector<double>> dh(cache.steps.size(),
                                      std::vector<double>(w.hidden_dim(), 0.0));
  dh.back().assign(dh_final.begin(), dh_final.end());
  return run_sequence_backward(w, cache, dh, grad);
}

// ---------------------------------------------------------------------------

BatchNormParams BatchNormParams::identity(std::size_t dim) {
  BatchNormParams p;
  p.scale = Tensor({dim}, 1.0);
  p.shift = Tensor({dim}, 0.0);
  p.running_mean = Tensor({dim}, 0.0);
  p.running_var = Tensor({dim}, 1.0);
  return p;
}

namespace {

void check_bn_dims(const BatchNormParams& p, const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != p.dim()) {
    throw DimensionError("batchnorm: batch " + shape_string(batch.shape()) +
                         " does not match feature width " + std::to_string(p.dim()));
  }
}

Tensor normalize_with(const BatchNormParams& p, const Tensor& batch,
                      std::span<const double> mean, std::span<const double> inv_std,
                      BatchNormCache* cache, BatchNormMode mode) {
  const std::size_t rows = batch.rows(), d = p.dim();
  Tensor x_hat(batch.shape());
  Tensor out(batch.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (batch.at(r, c) - mean[c]) * inv_std[c];
      x_hat.at(r, c) = xh;
      out.at(r, c) = p.scale[c] * xh + p.shift[c];
    }
  }
  if (cache != nullptr) {
    cache->mode = mode;
    cache->x_hat = std::move(x_hat);
    cache->inv_std.assign(inv_std.begin(), inv_std.end());
  }
  return out;
}

}  // namespace

Tensor batchnorm_infer(const BatchNormParams& p, const Tensor& batch, BatchNormCache* cache) {
  check_bn_dims(p, batch);
  const std::size_t d = p.dim();
  std::vector<double> inv_std(d);
  for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(p.running_var[c] + p.epsilon);
  return normalize_with(p, batch, p.running_mean.values(), inv_std, cache, BatchNormMode::kInfer);
}

Tensor batchnorm_forward(BatchNormParams& p, const Tensor& batch, BatchNormMode mode,
                         BatchNormCache* cache, bool update_running) {
  check_bn_dims(p, batch);
  if (mode == BatchNormMode::kInfer) return batchnorm_infer(p, batch, cache);

  const std::size_t rows = batch.rows(), d = p.dim();
  if (rows < 2) throw PreconditionError("batchnorm: train mode needs at least 2 rows");
  std::vector<double> mean(d, 0.0), var(d, 0.0), inv_std(d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += batch.at(r, c);
  }
  for (double& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = batch.at(r, c) - mean[c];
      var[c] += dv * dv;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    var[c] /= static_cast<double>(rows);
    inv_std[c] = 1.0 / std::sqrt(var[c] + p.epsilon);
  }
  if (update_running) {
    const double m = p.momentum;
    const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
    for (std::size_t c = 0; c < d; ++c) {
      p.running_mean[c] = (1.0 - m) * p.running_mean[c] + m * mean[c];
      p.running_var[c] = (1.0 - m) * p.running_var[c] + m * var[c] * unbias;
    }
  }
  return normalize_with(p, batch, mean, inv_std, cache, BatchNormMode::kTrain);
}

Tensor batchnorm_backward(const BatchNormParams& p, const BatchNormCache& cache, const Tensor& g,
                          BatchNormParams& grad) {
  const std::size_t rows = g.rows(), d = p.dim();
  if (g.shape() != cache.x_hat.shape()) throw DimensionError("batchnorm_backward: shape mismatch");
  Tensor dx(g.shape());
  std::vector<double> sum_dxh(d, 0.0), sum_dxh_xh(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double gv = g.at(r, c), xh = cache.x_hat.at(r, c);
      grad.scale[c] += gv * xh;
      grad.shift[c] += gv;
      const double dxh = gv * p.scale[c];
      sum_dxh[c] += dxh;
      sum_dxh_xh[c] += dxh * xh;
    }
  }
  const double n = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dxh = g.at(r, c) * p.scale[c];
      if (cache.mode == BatchNormMode::kInfer) {
        dx.at(r, c) = dxh * cache.inv_std[c];
      } else {
        dx.at(r, c) = cache.inv_std[c] / n *
                      (n * dxh - sum_dxh[c] - cache.x_hat.at(r, c) * sum_dxh_xh[c]);
      }
    }
  }
  return dx;
}

}  // namespace grounder

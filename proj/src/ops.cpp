#include "grounder/ops.hpp"

#include <algorithm>
#include <cmath>

#include "grounder/error.hpp"
#include "grounder/kernels.hpp"

namespace grounder::ops {
namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " must be a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

Tensor transpose(const Tensor& t) {
  Tensor out({t.cols(), t.rows()});
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) out.at(c, r) = t.at(r, c);
  }
  return out;
}

template <class F>
Tensor map(const Tensor& x, F f) {
  require_finite(x.values(), "elementwise op input");
  Tensor out = x;
  for (double& v : out.values()) v = f(v);
  require_finite(out.values(), "elementwise op");
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  kernels::active().gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  require_finite(c.values(), "matmul");
  return c;
}

MatmulGrad matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g) {
  if (g.rank() != 2 || g.rows() != a.rows() || g.cols() != b.cols()) {
    throw DimensionError("matmul_backward: upstream gradient " + shape_string(g.shape()) +
                         " does not match output of " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  return {matmul(g, transpose(b)), matmul(transpose(a), g)};
}

Tensor relu(const Tensor& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor relu_backward(const Tensor& x, const Tensor& g) {
  require_same_shape(x, g, "relu_backward");
  Tensor out = g;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x[i] > 0.0)) out[i] = 0.0;
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  return map(x, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& g) {
  require_same_shape(y, g, "sigmoid_backward");
  Tensor out = g;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i] * (1.0 - y[i]);
  return out;
}

Tensor tanh(const Tensor& x) {
  return map(x, [](double v) { return std::tanh(v); });
}

Tensor tanh_backward(const Tensor& y, const Tensor& g) {
  require_same_shape(y, g, "tanh_backward");
  Tensor out = g;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= 1.0 - y[i] * y[i];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  require_finite(out.values(), "add");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  require_finite(out.values(), "mul");
  return out;
}

BinaryGrad add_backward(const Tensor& g) { return {g, g}; }

BinaryGrad mul_backward(const Tensor& a, const Tensor& b, const Tensor& g) {
  require_same_shape(a, g, "mul_backward");
  return {mul(g, b), mul(g, a)};
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || bias.size() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not fit " +
                         shape_string(x.shape()));
  }
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
  require_finite(out.values(), "add_bias");
  return out;
}

BiasGrad add_bias_backward(const Tensor& g) {
  Tensor db({g.cols()});
  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto row = g.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
  }
  return {g, db};
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw PreconditionError("concat: no inputs");
  std::vector<double> data;
  for (const Tensor& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
  return Tensor::vector(std::move(data));
}

std::vector<Tensor> concat_backward(std::span<const Tensor> parts, const Tensor& g) {
  std::size_t total = 0;
  for (const Tensor& p : parts) total += p.size();
  if (total != g.size()) {
    throw DimensionError("concat_backward: gradient length " + std::to_string(g.size()) +
                         " does not match " + std::to_string(total));
  }
  std::vector<Tensor> out;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::vector<double> chunk(g.data() + offset, g.data() + offset + p.size());
    out.emplace_back(p.shape(), std::move(chunk));
    offset += p.size();
  }
  return out;
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return s;
}

double mean(const Tensor& x) { return sum(x) / static_cast<double>(x.size()); }

Tensor sum_backward(const Tensor& x, double g) { return Tensor(x.shape(), g); }

Tensor mean_backward(const Tensor& x, double g) {
  return Tensor(x.shape(), g / static_cast<double>(x.size()));
}

std::vector<double> softmax_stable(std::span<const double> logits) {
  if (logits.empty()) throw PreconditionError("softmax_stable: empty input");
  require_finite(logits, "softmax_stable input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

std::vector<double> softmax_backward(std::span<const double> y, std::span<const double> g) {
  if (y.size() != g.size()) throw DimensionError("softmax_backward: length mismatch");
  const double inner = kernels::active().dot(y.data(), g.data(), y.size());
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] * (g[i] - inner);
  return out;
}

double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) throw PreconditionError("log_sum_exp: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return mx + std::log(z);
}

double log_likelihood_from_logits(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw IndexError("log_likelihood: target " + std::to_string(target) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  require_finite(logits, "log_likelihood logits");
  // (mx - x_t) + log1p(sum over k != argmax of exp(x_k - mx)) keeps tiny losses accurate
  const std::size_t top = argmax(logits);
  const double mx = logits[top];
  double rest = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (k != top) rest += std::exp(logits[k] - mx);
  }
  return (mx - logits[target]) + std::log1p(rest);
}

std::vector<double> log_likelihood_backward(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw IndexError("log_likelihood_backward: target " + std::to_string(target) +
                     " out of range for " + std::to_string(logits.size()) + " classes");
  }
  std::vector<double> g = softmax_stable(logits);
  g[target] -= 1.0;
  return g;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw PreconditionError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace grounder::ops

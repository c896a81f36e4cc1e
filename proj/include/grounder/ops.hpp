#pragma once

// Tensor operations used by the grounding model, each paired with its
// vector-Jacobian product. Callers compose backward passes explicitly in
// reverse order; there is no tape.

#include <cstddef>
#include <span>
#include <vector>

#include "grounder/tensor.hpp"

namespace grounder::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
struct MatmulGrad {
  Tensor da;  // g * b^T
  Tensor db;  // a^T * g
};
MatmulGrad matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g);

Tensor relu(const Tensor& x);
// Passes g where x > 0; zero at and below the kink.
Tensor relu_backward(const Tensor& x, const Tensor& g);

Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& g);  // y = sigmoid(x)

Tensor tanh(const Tensor& x);
Tensor tanh_backward(const Tensor& y, const Tensor& g);  // y = tanh(x)

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
struct BinaryGrad {
  Tensor da;
  Tensor db;
};
BinaryGrad add_backward(const Tensor& g);
BinaryGrad mul_backward(const Tensor& a, const Tensor& b, const Tensor& g);

// x[B x d] + bias[d] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
struct BiasGrad {
  Tensor dx;
  Tensor dbias;
};
BiasGrad add_bias_backward(const Tensor& g);

// Concatenation of vectors, and the split that undoes it.
Tensor concat(std::span<const Tensor> parts);
std::vector<Tensor> concat_backward(std::span<const Tensor> parts, const Tensor& g);

double sum(const Tensor& x);
double mean(const Tensor& x);
Tensor sum_backward(const Tensor& x, double g);
Tensor mean_backward(const Tensor& x, double g);

// exp(x_i - max x) / sum_k exp(x_k - max x)
std::vector<double> softmax_stable(std::span<const double> logits);
// VJP of softmax given its output y and upstream g: y * (g - <y, g>).
std::vector<double> softmax_backward(std::span<const double> y, std::span<const double> g);

// log sum_k exp(x_k), shifted by the max.
double log_sum_exp(std::span<const double> logits);

// -log softmax(logits)[target], evaluated in log space.
double log_likelihood_from_logits(std::span<const double> logits, std::size_t target);
// softmax(logits) - onehot(target)
std::vector<double> log_likelihood_backward(std::span<const double> logits, std::size_t target);

// Index of the maximum; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace grounder::ops

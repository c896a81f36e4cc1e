#pragma once

// Slow reference implementations used by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <tuple>
#include <vector>

#include "grounder/attention.hpp"
#include "grounder/box.hpp"
#include "grounder/layers.hpp"
#include "grounder/tensor.hpp"

namespace grounder::oracle {

// Triple loop.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(p, j);
      c.data()[i * b.cols() + j] = s;
    }
  }
  return c;
}

// Plain scalar recurrence, gate rows in (input, forget, output, candidate) order.
inline LstmState lstm_step(const LstmWeights& w, const std::vector<double>& x, const std::vector<double>& h,
                           const std::vector<double>& c) {
  const std::size_t H = h.size();
  auto pre = [&](std::size_t row) {
    double s = w.bias[row];
    for (std::size_t k = 0; k < x.size(); ++k) s += w.w_x.at(row, k) * x[k];
    for (std::size_t k = 0; k < H; ++k) s += w.w_h.at(row, k) * h[k];
    return s;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  LstmState out{std::vector<double>(H), std::vector<double>(H)};
  for (std::size_t j = 0; j < H; ++j) {
    const double i = sig(pre(j));
    const double f = sig(pre(H + j));
    const double o = sig(pre(2 * H + j));
    const double g = std::tanh(pre(3 * H + j));
    out.c[j] = f * c[j] + i * g;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

// Recomputes the full perceptron for every box independently.
inline std::vector<double> attention_scores(const AttentionParams& p, const std::vector<double>& h, const Tensor& feats) {
  std::vector<double> out;
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    double s = p.b_2[0];
    for (std::size_t j = 0; j < p.w_h.rows(); ++j) {
      double a = p.b_1[j];
      for (std::size_t k = 0; k < h.size(); ++k) a += p.w_h.at(j, k) * h[k];
      for (std::size_t k = 0; k < feats.cols(); ++k) a += p.w_v.at(j, k) * feats.at(i, k);
      s += p.w_2.at(0, j) * std::max(0.0, a);
    }
    out.push_back(s);
  }
  return out;
}

// IoU of integer boxes by counting unit pixels.
inline double pixel_iou(const Box& a, const Box& b) {
  const int x0 = static_cast<int>(std::min(a.x_min, b.x_min)), x1 = static_cast<int>(std::max(a.x_max, b.x_max));
  const int y0 = static_cast<int>(std::min(a.y_min, b.y_min)), y1 = static_cast<int>(std::max(a.y_max, b.y_max));
  long inter = 0, uni = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
      const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline Box random_int_box(std::mt19937_64& rng, int extent = 30) {
  std::uniform_int_distribution<int> c(0, extent);
  int a = c(rng), b = c(rng), d = c(rng), e = c(rng);
  while (a == b) b = c(rng);
  while (d == e) e = c(rng);
  return {double(std::min(a, b)), double(std::min(d, e)), double(std::max(a, b)), double(std::max(d, e))};
}

// Greedy replay: sort every (phrase, box) pair by score descending, then
// phrase, then box, and take pairs whose phrase and box are both free.
inline std::vector<std::size_t> greedy_replay(const std::vector<std::vector<double>>& scores) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    for (std::size_t b = 0; b < scores[p].size(); ++b) pairs.emplace_back(-scores[p][b], p, b);
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> out(scores.size(), std::numeric_limits<std::size_t>::max());
  std::vector<bool> used(scores.empty() ? 0 : scores[0].size(), false);
  for (const auto& [s, p, b] : pairs) {
    if (out[p] != std::numeric_limits<std::size_t>::max() || used[b]) continue;
    out[p] = b;
    used[b] = true;
  }
  return out;
}

// Best total score over all injective assignments, by enumeration.
inline double best_assignment_score(const std::vector<std::vector<double>>& scores) {
  const std::size_t p = scores.size(), n = scores[0].size();
  std::vector<std::size_t> boxes(n);
  std::iota(boxes.begin(), boxes.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < p; ++i) s += scores[i][boxes[i]];
    best = std::max(best, s);
  } while (std::next_permutation(boxes.begin(), boxes.end()));
  return best;
}

inline double assignment_score(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += scores[i][a[i]];
  return s;
}

inline std::vector<std::vector<double>> random_scores(std::mt19937_64& rng, std::size_t phrases, std::size_t boxes,
                                                      bool integer_ties) {
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> small(0, 3);
  std::vector<std::vector<double>> s(phrases, std::vector<double>(boxes));
  for (auto& row : s) {
    for (double& v : row) v = integer_ties ? small(rng) : g(rng);
  }
  return s;
}

}  // namespace grounder::oracle

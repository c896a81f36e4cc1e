#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "grounder/error.hpp"
#include "grounder/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace grounder {
namespace {

using testing::max_rel_error;
using testing::numeric_grad;
using testing::random_tensor;
using testing::random_vector;

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, Examples) {
  const auto id = Tensor::matrix({{1, 0}, {0, 1}});
  const auto col = Tensor::matrix({{3}, {4}});
  EXPECT_EQ(ops::matmul(id, col), col);
  const auto r = ops::matmul(Tensor::matrix({{1, 2}}), col);
  EXPECT_DOUBLE_EQ(r[0], 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ops::matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x5"), std::string::npos) << msg;
  }
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 32);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = trial == 0 ? 3 : dim(rng), k = trial == 0 ? 4 : dim(rng), n = trial == 0 ? 2 : dim(rng);
    const auto a = random_tensor({m, k}, rng);
    const auto b = random_tensor({k, n}, rng);
    const auto c = ops::matmul(a, b);
    const auto o = oracle::matmul(a, b);
    // relative to sum |a_ik b_kj| since elementwise error is unbounded under cancellation
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double mag = 0.0;
        for (std::size_t p = 0; p < k; ++p) mag += std::abs(a.at(i, p) * b.at(p, j));
        EXPECT_LE(std::abs(c.at(i, j) - o.at(i, j)), 1e-12 * std::max(mag, 1e-300));
      }
    }
  }
}

TEST(Relu, Examples) {
  const auto y = ops::relu(Tensor::vector({-1, 0, 2}));
  EXPECT_EQ(y, Tensor::vector({0, 0, 2}));
  EXPECT_EQ(ops::relu(Tensor({3})), Tensor({3}));
  const auto g = ops::relu_backward(Tensor::vector({-3, 5}), Tensor::vector({1, 1}));
  EXPECT_EQ(g, Tensor::vector({0, 1}));
  EXPECT_EQ(ops::relu_backward(Tensor::vector({0.0}), Tensor::vector({1.0}))[0], 0.0);
}

TEST(Softmax, Examples) {
  for (double c : {-5.0, 0.0, 3.0, 700.0}) {
    const auto y = ops::softmax_stable(std::vector<double>(4, c));
    for (double v : y) EXPECT_NEAR(v, 0.25, 1e-15);
  }
  const auto y = ops::softmax_stable(std::vector<double>{0.0, std::log(3.0)});
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
  EXPECT_THROW(ops::softmax_stable(std::vector<double>{}), PreconditionError);
}

TEST(Softmax, LargeLogitsMatchExtendedPrecision) {
  const auto y = ops::softmax_stable(std::vector<double>{1000.0, 1001.0});
  const long double e = std::exp(-1.0L);
  const long double p0 = e / (1.0L + e);
  EXPECT_NEAR(y[0], static_cast<double>(p0), 1e-12);
  EXPECT_NEAR(y[1], static_cast<double>(1.0L - p0), 1e-12);
  const auto z = ops::softmax_stable(std::vector<double>{0.0, 1.0});
  EXPECT_NEAR(y[0], z[0], 1e-12);
}

TEST(Softmax, ProbabilityVectorAndShiftInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_vector(1 + trial % 17, rng, 5.0);
    const auto y = ops::softmax_stable(x);
    double s = 0.0;
    for (double v : y) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_EQ(ops::argmax(x), ops::argmax(y));
    auto xs = x;
    const double c = shift(rng);
    for (double& v : xs) v += c;
    const auto ys = ops::softmax_stable(xs);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ys[i], 1e-12);
  }
}

TEST(LogLikelihood, Examples) {
  EXPECT_NEAR(ops::log_likelihood_from_logits(std::vector<double>{0, 0}, 0), std::numbers::ln2, 1e-15);
  const long double oracle = std::log1p(std::exp(-20.0L));
  EXPECT_NEAR(ops::log_likelihood_from_logits(std::vector<double>{10, -10}, 0), static_cast<double>(oracle), 1e-15 * static_cast<double>(oracle));
  EXPECT_NEAR(ops::log_likelihood_from_logits(std::vector<double>{10, -10}, 0), 2.06e-9, 0.01e-9);
  const auto g = ops::log_likelihood_backward(std::vector<double>{0, 0}, 1);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], -0.5);
  EXPECT_THROW(ops::log_likelihood_from_logits(std::vector<double>{0, 0}, 2), IndexError);
}

TEST(Argmax, TiesToLowestIndex) {
  EXPECT_EQ(ops::argmax(std::vector<double>{2, 2}), 0u);
  EXPECT_EQ(ops::argmax(std::vector<double>{1, 3, 3, 0}), 1u);
}

TEST(Numerics, NonFiniteIsAnError) {
  const auto nan = Tensor::vector({1.0, std::nan("")});
  EXPECT_THROW(ops::relu(nan), NumericError);
  EXPECT_THROW(ops::add(nan, Tensor::vector({0, 0})), NumericError);
  EXPECT_THROW(ops::softmax_stable(std::vector<double>{0.0, INFINITY}), NumericError);
}

// Finite differences of loss = <w, op(x)> against the op's VJP.
class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{1234};
  static constexpr int kTrials = 100;
  static constexpr double kTol = 1e-5;

  static double dot(const Tensor& a, const Tensor& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w[i];
    return s;
  }
};

TEST_F(OpGradients, Matmul) {
  for (int t = 0; t < kTrials; ++t) {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    const auto w = random_tensor({3, 2}, rng);
    const auto g = ops::matmul_backward(a, b, w);
    auto f = [&] { return dot(ops::matmul(a, b), w); };
    EXPECT_LT(max_rel_error(g.da.values(), numeric_grad(a.values(), f)), kTol);
    EXPECT_LT(max_rel_error(g.db.values(), numeric_grad(b.values(), f)), kTol);
  }
}

TEST_F(OpGradients, Elementwise) {
  for (int t = 0; t < kTrials; ++t) {
    auto x = random_tensor({6}, rng);
    for (double& v : x.values()) {
      if (std::abs(v) < 1e-3) v = 0.5;  // keep away from the relu kink
    }
    auto y = random_tensor({6}, rng);
    const auto w = random_tensor({6}, rng);
    EXPECT_LT(max_rel_error(ops::relu_backward(x, w).values(),
                            numeric_grad(x.values(), [&] { return dot(ops::relu(x), w); })),
              kTol);
    EXPECT_LT(max_rel_error(ops::sigmoid_backward(ops::sigmoid(x), w).values(),
                            numeric_grad(x.values(), [&] { return dot(ops::sigmoid(x), w); })),
              kTol);
    EXPECT_LT(max_rel_error(ops::tanh_backward(ops::tanh(x), w).values(),
                            numeric_grad(x.values(), [&] { return dot(ops::tanh(x), w); })),
              kTol);
    const auto ga = ops::add_backward(w);
    EXPECT_LT(max_rel_error(ga.da.values(), numeric_grad(x.values(), [&] { return dot(ops::add(x, y), w); })), kTol);
    EXPECT_LT(max_rel_error(ga.db.values(), numeric_grad(y.values(), [&] { return dot(ops::add(x, y), w); })), kTol);
    const auto gm = ops::mul_backward(x, y, w);
    EXPECT_LT(max_rel_error(gm.da.values(), numeric_grad(x.values(), [&] { return dot(ops::mul(x, y), w); })), kTol);
    EXPECT_LT(max_rel_error(gm.db.values(), numeric_grad(y.values(), [&] { return dot(ops::mul(x, y), w); })), kTol);
  }
}

TEST_F(OpGradients, BiasConcatReductions) {
  for (int t = 0; t < kTrials; ++t) {
    auto x = random_tensor({3, 4}, rng);
    auto bias = random_tensor({4}, rng);
    const auto w = random_tensor({3, 4}, rng);
    const auto gb = ops::add_bias_backward(w);
    auto f = [&] { return dot(ops::add_bias(x, bias), w); };
    EXPECT_LT(max_rel_error(gb.dx.values(), numeric_grad(x.values(), f)), kTol);
    EXPECT_LT(max_rel_error(gb.dbias.values(), numeric_grad(bias.values(), f)), kTol);

    std::vector<Tensor> parts{random_tensor({2}, rng), random_tensor({3}, rng)};
    const auto wc = random_tensor({5}, rng);
    const auto gc = ops::concat_backward(parts, wc);
    auto fc = [&] { return dot(ops::concat(parts), wc); };
    EXPECT_LT(max_rel_error(gc[0].values(), numeric_grad(parts[0].values(), fc)), kTol);
    EXPECT_LT(max_rel_error(gc[1].values(), numeric_grad(parts[1].values(), fc)), kTol);

    EXPECT_LT(max_rel_error(ops::sum_backward(x, 1.7).values(),
                            numeric_grad(x.values(), [&] { return 1.7 * ops::sum(x); })),
              kTol);
    EXPECT_LT(max_rel_error(ops::mean_backward(x, -0.3).values(),
                            numeric_grad(x.values(), [&] { return -0.3 * ops::mean(x); })),
              kTol);
  }
}

TEST_F(OpGradients, SoftmaxAndLogLikelihood) {
  for (int t = 0; t < kTrials; ++t) {
    auto x = random_vector(5, rng, 2.0);
    const auto w = random_vector(5, rng);
    auto f = [&] {
      const auto y = ops::softmax_stable(x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
      return s;
    };
    EXPECT_LT(max_rel_error(ops::softmax_backward(ops::softmax_stable(x), w), numeric_grad(x, f)), kTol);
    const std::size_t target = static_cast<std::size_t>(t) % 5;
    EXPECT_LT(max_rel_error(ops::log_likelihood_backward(x, target),
                            numeric_grad(x, [&] { return ops::log_likelihood_from_logits(x, target); })),
              kTol);
  }
}

}  // namespace
}  // namespace grounder

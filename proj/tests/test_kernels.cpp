#include <gtest/gtest.h>

#include "grounder/error.hpp"
#include "grounder/kernels.hpp"
#include "test_util.hpp"

namespace grounder {
namespace {

using testing::random_vector;

// Tolerance relative to the sum of absolute terms, which bounds the
// reassociation error of a vectorized reduction.
void expect_close(double a, double b, double abs_terms) {
  EXPECT_LE(std::abs(a - b), 1e-14 * std::max(1.0, abs_terms)) << a << " vs " << b;
}

class KernelEquivalence : public ::testing::TestWithParam<std::size_t> {
 protected:
  void SetUp() override {
    if (kernels::avx2() == nullptr) GTEST_SKIP() << "no AVX2 on this CPU";
  }
};

TEST_P(KernelEquivalence, Dot) {
  const std::size_t n = GetParam();
  std::mt19937_64 rng(n);
  auto x = random_vector(n, rng);
  auto y = random_vector(n, rng);
  double abs_terms = 0.0;
  for (std::size_t i = 0; i < n; ++i) abs_terms += std::abs(x[i] * y[i]);
  expect_close(kernels::scalar().dot(x.data(), y.data(), n), kernels::avx2()->dot(x.data(), y.data(), n), abs_terms);
}

TEST_P(KernelEquivalence, AxpyAndGer) {
  const std::size_t n = GetParam();
  std::mt19937_64 rng(n + 100);
  auto x = random_vector(n, rng);
  auto y1 = random_vector(n, rng);
  auto y2 = y1;
  kernels::scalar().axpy(0.37, x.data(), y1.data(), n);
  kernels::avx2()->axpy(0.37, x.data(), y2.data(), n);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-15 * (1.0 + std::abs(y1[i])));

  const std::size_t rows = n / 2 + 1;
  auto u = random_vector(rows, rng);
  auto a1 = random_vector(rows * n, rng);
  auto a2 = a1;
  kernels::scalar().ger(a1.data(), rows, n, -1.3, u.data(), x.data());
  kernels::avx2()->ger(a2.data(), rows, n, -1.3, u.data(), x.data());
  for (std::size_t i = 0; i < a1.size(); ++i) EXPECT_NEAR(a1[i], a2[i], 1e-14 * (1.0 + std::abs(a1[i])));
}

TEST_P(KernelEquivalence, GemvBothWays) {
  const std::size_t cols = GetParam();
  const std::size_t rows = cols + 3;
  std::mt19937_64 rng(cols + 200);
  auto a = random_vector(rows * cols, rng);
  auto x = random_vector(cols, rng);
  auto xt = random_vector(rows, rng);
  std::vector<double> y1(rows, 0.5), y2(rows, 0.5), z1(cols, -0.5), z2(cols, -0.5);
  kernels::scalar().gemv(a.data(), rows, cols, x.data(), y1.data());
  kernels::avx2()->gemv(a.data(), rows, cols, x.data(), y2.data());
  kernels::scalar().gemv_t(a.data(), rows, cols, xt.data(), z1.data());
  kernels::avx2()->gemv_t(a.data(), rows, cols, xt.data(), z2.data());
  for (std::size_t r = 0; r < rows; ++r) {
    double terms = 0.5;
    for (std::size_t c = 0; c < cols; ++c) terms += std::abs(a[r * cols + c] * x[c]);
    expect_close(y1[r], y2[r], terms);
  }
  for (std::size_t c = 0; c < cols; ++c) {
    double terms = 0.5;
    for (std::size_t r = 0; r < rows; ++r) terms += std::abs(a[r * cols + c] * xt[r]);
    expect_close(z1[c], z2[c], terms);
  }
}

TEST_P(KernelEquivalence, Gemm) {
  const std::size_t k = GetParam();
  const std::size_t m = 5;
  const std::size_t n = k + 2;
  std::mt19937_64 rng(k + 300);
  auto a = random_vector(m * k, rng);
  auto b = random_vector(k * n, rng);
  std::vector<double> c1(m * n, 1.0), c2(m * n, 1.0);
  kernels::scalar().gemm(a.data(), b.data(), c1.data(), m, k, n);
  kernels::avx2()->gemm(a.data(), b.data(), c2.data(), m, k, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double terms = 1.0;
      for (std::size_t p = 0; p < k; ++p) terms += std::abs(a[i * k + p] * b[p * n + j]);
      expect_close(c1[i * n + j], c2[i * n + j], terms);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, KernelEquivalence, ::testing::Values(1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 129));

TEST(Kernels, SelectionRoundTrip) {
  const std::string before = kernels::active().name;
  kernels::select("scalar");
  EXPECT_STREQ(kernels::active().name, kernels::scalar().name);
  if (kernels::avx2() != nullptr) {
    kernels::select("avx2");
    EXPECT_STREQ(kernels::active().name, kernels::avx2()->name);
  }
  EXPECT_THROW(kernels::select("neon-ultra"), Error);
  kernels::select("auto");
  EXPECT_EQ(kernels::available().front(), "scalar");
  (void)before;
}

}  // namespace
}  // namespace grounder

#include "kernels_internal.hpp"

namespace grounder::kernels::detail {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x,
                 double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] += dot_scalar(a + r * cols, x, cols);
}

void gemv_t_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x,
                   double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (x[r] != 0.0) axpy_scalar(x[r], a + r * cols, y, cols);
  }
}

void ger_scalar(double* a, std::size_t rows, std::size_t cols, double alpha, const double* x,
                const double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = alpha * x[r];
    if (s != 0.0) axpy_scalar(s, y, a + r * cols, cols);
  }
}

void gemm_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) axpy_scalar(a[i * k + p], b + p * n, c + i * n, n);
  }
}

}  // namespace

const KernelTable kScalarTable{"scalar",     dot_scalar, axpy_scalar, gemv_scalar,
                               gemv_t_scalar, ger_scalar, gemm_scalar};

}  // namespace grounder::kernels::detail

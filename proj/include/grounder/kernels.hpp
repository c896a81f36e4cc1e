#pragma once

// Dense double-precision inner loops. Every kernel has a scalar reference
// implementation; an AVX2/FMA variant is compiled on x86-64 and selected at
// runtime when the CPU supports it. All matrices are row-major.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace grounder::kernels {

struct KernelTable {
  const char* name;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[rows] += A[rows x cols] * x[cols]
  void (*gemv)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
  // y[cols] += A^T * x[rows]
  void (*gemv_t)(const double* a, std::size_t rows, std::size_t cols, const double* x,
                 double* y);
  // A[rows x cols] += alpha * x[rows] * y[cols]^T
  void (*ger)(double* a, std::size_t rows, std::size_t cols, double alpha, const double* x,
              const double* y);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n);
};

const KernelTable& scalar();

// nullptr when not compiled in or not supported by this CPU.
const KernelTable* avx2();

// Currently selected table. Defaults to the widest supported variant.
const KernelTable& active();

// "auto", "scalar" or "avx2". Throws ConfigError for unknown or unsupported names.
void select(std::string_view name);

std::vector<std::string> available();

}  // namespace grounder::kernels

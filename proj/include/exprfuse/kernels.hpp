#pragma once

#include <cstddef>
#include <span>

// Dense row-major matrix kernels. Every kernel exists twice: a plain serial
// reference and an OpenMP version parallelized over output rows. Both
// accumulate each output element over the inner dimension in ascending
// order, so their results are bitwise identical for any thread count.
//
// All kernels accumulate into `c` (c += ...). Callers zero `c` first when
// they want a plain product.

namespace exprfuse::kernels {

struct GemmDims {
    std::size_t m = 0;  // rows of C
    std::size_t n = 0;  // cols of C
    std::size_t k = 0;  // inner dimension
};

namespace serial {

// C[m×n] += A[m×k] · B[k×n]
void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);
// C[m×n] += A[m×k] · B[n×k]ᵀ
void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);
// C[m×n] += A[k×m]ᵀ · B[k×n]
void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);

// Numerically stable softmax of each contiguous row of width `cols`.
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y);

}  // namespace serial

namespace omp {

void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y);

}  // namespace omp

// Dispatching entry points used by the tensor ops. They route to the OpenMP
// kernels when the library was built with OpenMP, else to the serial ones.
void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y);

bool parallel_enabled();

}  // namespace exprfuse::kernels

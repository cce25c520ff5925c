#include "exprfuse/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef EXPRFUSE_HAVE_OPENMP
#include <omp.h>
#endif

namespace exprfuse::kernels {

namespace {

// Inner-dimension panel for the blocked kernels. Keeps a slab of B resident
// in cache while every row of A streams past it.
constexpr std::size_t kPanel = 64;

inline void softmax_row(std::size_t cols, const double* x, double* y) {
    double peak = x[0];
    for (std::size_t j = 1; j < cols; ++j) peak = std::max(peak, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - peak);
        total += y[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

}  // namespace

namespace serial {

void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t p = 0; p < d.k; ++p) {
            const double aip = a[i * d.k + p];
            for (std::size_t j = 0; j < d.n; ++j) c[i * d.n + j] += aip * b[p * d.n + j];
        }
    }
}

void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) {
            double s = c[i * d.n + j];
            for (std::size_t p = 0; p < d.k; ++p) s += a[i * d.k + p] * b[j * d.k + p];
            c[i * d.n + j] = s;
        }
    }
}

void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) {
            double s = c[i * d.n + j];
            for (std::size_t p = 0; p < d.k; ++p) s += a[p * d.m + i] * b[p * d.n + j];
            c[i * d.n + j] = s;
        }
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y) {
    for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, x.data() + r * cols, y.data() + r * cols);
}

}  // namespace serial

namespace omp {

void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    const auto m = static_cast<std::ptrdiff_t>(d.m);
    const std::size_t n = d.n;
    const std::size_t k = d.k;
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    for (std::size_t p0 = 0; p0 < k; p0 += kPanel) {
        const std::size_t p1 = std::min(k, p0 + kPanel);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < m; ++i) {
            double* crow = cp + static_cast<std::size_t>(i) * n;
            const double* arow = ap + static_cast<std::size_t>(i) * k;
            for (std::size_t p = p0; p < p1; ++p) {
                const double aip = arow[p];
                const double* brow = bp + p * n;
#pragma omp simd
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }
}

void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    // Transpose B once so the inner loop runs over contiguous memory.
    std::vector<double> bt(d.k * d.n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(d.n); ++j) {
        for (std::size_t p = 0; p < d.k; ++p) bt[p * d.n + static_cast<std::size_t>(j)] = b[static_cast<std::size_t>(j) * d.k + p];
    }
    omp::gemm_nn(d, a, bt, c);
}

void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    const auto m = static_cast<std::ptrdiff_t>(d.m);
    const std::size_t n = d.n;
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    for (std::size_t p0 = 0; p0 < d.k; p0 += kPanel) {
        const std::size_t p1 = std::min(d.k, p0 + kPanel);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < m; ++i) {
            double* crow = cp + static_cast<std::size_t>(i) * n;
            for (std::size_t p = p0; p < p1; ++p) {
                const double api = ap[p * d.m + static_cast<std::size_t>(i)];
                const double* brow = bp + p * n;
#pragma omp simd
                for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
            }
        }
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
        const auto row = static_cast<std::size_t>(r);
        softmax_row(cols, x.data() + row * cols, y.data() + row * cols);
    }
}

}  // namespace omp

bool parallel_enabled() {
#ifdef EXPRFUSE_HAVE_OPENMP
    return true;
#else
    return false;
#endif
}

void gemm_nn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    if (d.m == 0 || d.n == 0 || d.k == 0) return;
    omp::gemm_nn(d, a, b, c);
}

void gemm_nt(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    if (d.m == 0 || d.n == 0 || d.k == 0) return;
    omp::gemm_nt(d, a, b, c);
}

void gemm_tn(GemmDims d, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    if (d.m == 0 || d.n == 0 || d.k == 0) return;
    omp::gemm_tn(d, a, b, c);
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y) {
    if (rows == 0 || cols == 0) return;
    omp::softmax_rows(rows, cols, x, y);
}

}  // namespace exprfuse::kernels

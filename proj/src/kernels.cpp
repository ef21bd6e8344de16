#include "t2s/kernels.hpp"

#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace t2s::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 16;

bool go_parallel(std::size_t work) {
#ifdef _OPENMP
    return work >= kParallelWork && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
    (void)work;
    return false;
#endif
}

template <typename Real>
inline void axpy_row(Real alpha, const Real* __restrict x, Real* __restrict y, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

template <typename Real>
inline void nn_row(const Real* a_row, const Real* b, Real* c_row, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const Real s = a_row[p];
        if (s != Real{0}) axpy_row(s, b + p * n, c_row, n);
    }
}

template <typename Real>
inline double sq_dist(const Real* z, const double* c, std::size_t dim) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
        const double d = static_cast<double>(z[j]) - c[j];
        acc += d * d;
    }
    return acc;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n < 1 ? 1 : n);
#else
    (void)n;
#endif
}

template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    const bool par = go_parallel(m * k * n);
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i) nn_row(a + i * k, b, c + i * n, k, n);
}

template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    // Transposing b once turns the strided dot products into the
    // vectorizable axpy form of gemm_nn.
    std::vector<Real> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(a, bt.data(), c, m, k, n);
}

template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    const bool par = go_parallel(m * k * n);
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        Real* c_row = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Real s = a[p * m + i];
            if (s != Real{0}) axpy_row(s, b + p * n, c_row, n);
        }
    }
}

template <typename Real>
void nearest_rows(const Real* z, std::size_t n, const double* codes, std::size_t k, std::size_t dim,
                  std::span<std::uint32_t> out, std::span<double> dist2) {
    const bool par = go_parallel(n * k * dim);
    const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t arg = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double d = sq_dist(z + i * dim, codes + c * dim, dim);
            if (d < best) {
                best = d;
                arg = static_cast<std::uint32_t>(c);
            }
        }
        out[i] = arg;
        if (!dist2.empty()) dist2[i] = best;
    }
}

namespace serial {

template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            Real acc{0};
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] += acc;
        }
}

template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            Real acc{0};
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] += acc;
        }
}

template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            Real acc{0};
            for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
            c[i * n + j] += acc;
        }
}

template <typename Real>
void nearest_rows(const Real* z, std::size_t n, const double* codes, std::size_t k, std::size_t dim,
                  std::span<std::uint32_t> out, std::span<double> dist2) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            double d = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double diff = static_cast<double>(z[i * dim + j]) - codes[c * dim + j];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = static_cast<std::uint32_t>(c);
            }
        }
        out[i] = arg;
        if (!dist2.empty()) dist2[i] = best;
    }
}

}  // namespace serial

#define T2S_INSTANTIATE_KERNELS(NS, R)                                                              \
    template void NS gemm_nn<R>(const R*, const R*, R*, std::size_t, std::size_t, std::size_t);    \
    template void NS gemm_nt<R>(const R*, const R*, R*, std::size_t, std::size_t, std::size_t);    \
    template void NS gemm_tn<R>(const R*, const R*, R*, std::size_t, std::size_t, std::size_t);    \
    template void NS nearest_rows<R>(const R*, std::size_t, const double*, std::size_t, std::size_t, \
                                      std::span<std::uint32_t>, std::span<double>);

T2S_INSTANTIATE_KERNELS(, float)
T2S_INSTANTIATE_KERNELS(, double)
T2S_INSTANTIATE_KERNELS(serial::, float)
T2S_INSTANTIATE_KERNELS(serial::, double)

#undef T2S_INSTANTIATE_KERNELS

}  // namespace t2s::kernels

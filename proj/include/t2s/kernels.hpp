#pragma once

// Dense inner loops used by the autodiff engine and the quantizer.
//
// Every kernel has two implementations:
//   t2s::kernels::*          OpenMP-parallel over output rows. Each row is
//                            computed by one thread with a fixed summation
//                            order, so results are bit-identical for any
//                            thread count.
//   t2s::kernels::serial::*  Plain textbook loops kept as a reference for
//                            tests and the benchmark.
//
// All matrices are row-major; the gemm kernels accumulate into c.

#include <cstddef>
#include <cstdint>
#include <span>

namespace t2s::kernels {

// c[m×n] += a[m×k] · b[k×n]
template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);

// c[m×n] += a[m×k] · b[n×k]ᵀ
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);

// c[m×n] += a[k×m]ᵀ · b[k×n]
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);

// For each row z_i of z[n×dim], the index of the nearest row of codes[k×dim]
// by squared Euclidean distance (accumulated in double), lowest index on ties.
// dist2 receives the winning squared distance when non-empty.
template <typename Real>
void nearest_rows(const Real* z, std::size_t n, const double* codes, std::size_t k, std::size_t dim,
                  std::span<std::uint32_t> out, std::span<double> dist2 = {});

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();
void set_threads(int n);

namespace serial {

template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);
template <typename Real>
void nearest_rows(const Real* z, std::size_t n, const double* codes, std::size_t k, std::size_t dim,
                  std::span<std::uint32_t> out, std::span<double> dist2 = {});

}  // namespace serial

}  // namespace t2s::kernels

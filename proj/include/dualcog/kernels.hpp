#ifndef DUALCOG_KERNELS_HPP_
#define DUALCOG_KERNELS_HPP_

#include <cstddef>
#include <functional>

// Dense kernels used by the autodiff tape. Every kernel exists twice: a serial
// reference in kernels::serial and an OpenMP version in kernels. Both run the
// same per-element operation order, so their results are bitwise identical;
// the tests hold them to that.
namespace dualcog::kernels {

// All matrices are row-major. Each kernel accumulates into C.
//   gemm_nn: C[m×n] += A[m×k] · B[k×n]
//   gemm_nt: C[m×n] += A[m×k] · B[n×k]ᵀ
//   gemm_tn: C[m×n] += A[k×m]ᵀ · B[k×n]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n);
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n);
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n);

// Runs fn(i) for i in [0, n); iterations are independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

namespace serial {
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n);
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n);
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n);
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);
}  // namespace serial

// Work (m·k·n) below which the OpenMP kernels stay single-threaded.
inline constexpr long kParallelWork = 1L << 16;

}  // namespace dualcog::kernels

#endif  // DUALCOG_KERNELS_HPP_

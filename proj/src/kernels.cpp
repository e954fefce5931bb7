#include "dualcog/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dualcog::kernels {
namespace {

long work(int m, int k, int n) {
  return static_cast<long>(m) * static_cast<long>(k) * static_cast<long>(n);
}

template <bool kParallel>
void nn(const double* a, const double* b, double* c, int m, int k, int n) {
  const bool par = kParallel && work(m, k, n) >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <bool kParallel>
void nt(const double* a, const double* b, double* c, int m, int k, int n) {
  const bool par = kParallel && work(m, k, n) >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

template <bool kParallel>
void tn(const double* a, const double* b, double* c, int m, int k, int n) {
  const bool par = kParallel && work(m, k, n) >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::size_t>(p) * m + i];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  nn<true>(a, b, c, m, k, n);
}
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  nt<true>(a, b, c, m, k, n);
}
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  tn<true>(a, b, c, m, k, n);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  nn<false>(a, b, c, m, k, n);
}
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  nt<false>(a, b, c, m, k, n);
}
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  tn<false>(a, b, c, m, k, n);
}
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  for (std::size_t i = 0; i < n; ++i) fn(i);
}
}  // namespace serial

}  // namespace dualcog::kernels

#include <doctest.h>

#include <atomic>
#include <vector>

#include "dualcog/kernels.hpp"
#include "dualcog/rng.hpp"

using namespace dualcog;

namespace {

std::vector<double> random_matrix(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.normal();
  return v;
}

// Naive triple loops with index formulas written out independently.
std::vector<double> ref_nn(const std::vector<double>& a, const std::vector<double>& b, int m,
                           int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

}  // namespace

TEST_CASE("gemm variants match a naive product") {
  const int m = 7, k = 5, n = 6;
  const auto a = random_matrix(m * k, 1);
  const auto b = random_matrix(k * n, 2);
  const auto expect = ref_nn(a, b, m, k, n);

  std::vector<double> c(m * n, 0.0);
  kernels::gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-13));

  // B transposed: bt[j*k + p] = b[p*n + j].
  std::vector<double> bt(k * n);
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  std::fill(c.begin(), c.end(), 0.0);
  kernels::gemm_nt(a.data(), bt.data(), c.data(), m, k, n);
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-13));

  // A transposed: at[p*m + i] = a[i*k + p].
  std::vector<double> at(m * k);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  std::fill(c.begin(), c.end(), 0.0);
  kernels::gemm_tn(at.data(), b.data(), c.data(), m, k, n);
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("gemm accumulates into C") {
  const std::vector<double> a{1, 2}, b{3, 4};
  std::vector<double> c{10.0};
  kernels::gemm_nn(a.data(), b.data(), c.data(), 1, 2, 1);
  CHECK(c[0] == 21.0);
}

TEST_CASE("parallel kernels equal the serial reference bitwise") {
  // Large enough to cross the parallel threshold.
  for (auto [m, k, n] : {std::tuple{64, 48, 80}, std::tuple{3, 2, 5}, std::tuple{129, 65, 33}}) {
    const auto a = random_matrix(m * k, 11);
    const auto b = random_matrix(k * n, 12);
    const auto bt = random_matrix(n * k, 13);
    const auto at = random_matrix(k * m, 14);
    std::vector<double> p(m * n, 0.5), s(m * n, 0.5);
    kernels::gemm_nn(a.data(), b.data(), p.data(), m, k, n);
    kernels::serial::gemm_nn(a.data(), b.data(), s.data(), m, k, n);
    CHECK(p == s);
    kernels::gemm_nt(a.data(), bt.data(), p.data(), m, k, n);
    kernels::serial::gemm_nt(a.data(), bt.data(), s.data(), m, k, n);
    CHECK(p == s);
    kernels::gemm_tn(at.data(), b.data(), p.data(), m, k, n);
    kernels::serial::gemm_tn(at.data(), b.data(), s.data(), m, k, n);
    CHECK(p == s);
  }
}

TEST_CASE("parallel_for visits every index once") {
  std::vector<std::atomic<int>> hits(1000);
  kernels::parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  std::vector<int> order;
  kernels::serial::parallel_for(5, [&](std::size_t i) { order.push_back(static_cast<int>(i)); });
  CHECK(order == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(kernels::max_threads() >= 1);
}

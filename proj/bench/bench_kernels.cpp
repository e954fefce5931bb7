// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <vector>

#include "dualcog/kernels.hpp"
#include "dualcog/policy.hpp"
#include "dualcog/rng.hpp"
#include "dualcog/sft.hpp"

using namespace dualcog;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <bool kParallel>
void BM_GemmNN(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = filled(static_cast<std::size_t>(n) * n, 1);
  const auto b = filled(static_cast<std::size_t>(n) * n, 2);
  std::vector<double> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    if constexpr (kParallel) {
      kernels::gemm_nn(a.data(), b.data(), c.data(), n, n, n);
    } else {
      kernels::serial::gemm_nn(a.data(), b.data(), c.data(), n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2L * n * n * n);
}

template <Exec kExec>
void BM_SftGradient(benchmark::State& state) {
  PolicyConfig pc;
  pc.vocab_size = 200;
  pc.context_length = 128;
  pc.d_model = 32;
  pc.n_layers = 2;
  pc.n_heads = 2;
  const PolicyParams p = init_params(pc, 1, 0.05);
  Rng rng(3);
  std::vector<SftExample> batch(static_cast<std::size_t>(state.range(0)));
  for (auto& e : batch) {
    e.prompt.push_back(0);
    for (int i = 0; i < 40; ++i) e.prompt.push_back(3 + static_cast<TokenId>(rng.below(197)));
    for (int i = 0; i < 60; ++i) e.target.push_back(3 + static_cast<TokenId>(rng.below(197)));
  }
  for (auto _ : state) {
    const LossAndGrad lg = accumulate_gradients(
        p, batch.size(),
        [&](Tape& tape, std::size_t i) {
          return ad::scale(tape.graph(),
                           ad::sum(tape.graph(), tape.logprobs(batch[i].prompt, batch[i].target)),
                           -1.0);
        },
        kExec);
    benchmark::DoNotOptimize(lg.loss);
  }
}

}  // namespace

BENCHMARK(BM_GemmNN<false>)->Name("gemm_nn/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_GemmNN<true>)->Name("gemm_nn/openmp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_SftGradient<Exec::kSerial>)->Name("sft_gradient/serial")->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SftGradient<Exec::kParallel>)->Name("sft_gradient/openmp")->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

// Serial reference vs OpenMP variant for each kernel. Run with
// OMP_NUM_THREADS to compare thread counts; on a single core the OpenMP
// numbers show the runtime overhead only.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "metaspatial/kernels.hpp"

using namespace metaspatial;
using namespace metaspatial::kernels;

namespace {

std::vector<Aabb> random_boxes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0, 6), ext(0.2, 1.2);
  std::vector<Aabb> out(n);
  for (auto& b : out) {
    for (Axis a : kAxes) {
      const double lo = pos(rng);
      b.min[a] = lo;
      b.max[a] = lo + ext(rng);
    }
  }
  return out;
}

std::vector<std::vector<Aabb>> random_scenes(std::size_t scenes) {
  std::vector<std::vector<Aabb>> out;
  for (std::size_t s = 0; s < scenes; ++s) out.push_back(random_boxes(2 + s % 9, s));
  return out;
}

template <auto Fn>
void BM_overlap(benchmark::State& state) {
  const auto boxes = random_boxes(static_cast<std::size_t>(state.range(0)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(boxes));
  state.SetComplexityN(state.range(0));
}

template <auto Fn>
void BM_batch(benchmark::State& state) {
  const auto scenes = random_scenes(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(scenes));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Fn>
void BM_normalize(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> in(n), out(n);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  for (auto& v : in) v = d(rng);
  for (auto _ : state) {
    Fn(in, 0.1, 1.3, 1e-8, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Fn>
void BM_surrogate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> lnew(n), lold(n), lref(n), adv(n), ratio(n), pol(n), kl(n);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> lp(-4, -0.01), a(-2, 2);
  for (std::size_t k = 0; k < n; ++k) {
    lnew[k] = lp(rng);
    lold[k] = lp(rng);
    lref[k] = lp(rng);
    adv[k] = a(rng);
  }
  const SurrogateInputs in{lnew, lold, lref, adv};
  const SurrogateOutputs out{ratio, pol, kl};
  for (auto _ : state) {
    Fn(in, 0.2, out);
    benchmark::DoNotOptimize(pol.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_overlap<overlap_pairs_serial>)->Name("overlap/serial")->RangeMultiplier(4)->Range(16, 4096);
BENCHMARK(BM_overlap<overlap_pairs_omp>)->Name("overlap/omp")->RangeMultiplier(4)->Range(16, 4096);
BENCHMARK(BM_batch<overlap_pairs_batch_serial>)->Name("overlap_batch/serial")->Arg(1000)->Arg(10000);
BENCHMARK(BM_batch<overlap_pairs_batch_omp>)->Name("overlap_batch/omp")->Arg(1000)->Arg(10000);
BENCHMARK(BM_normalize<normalize_serial>)->Name("normalize/serial")->Arg(1 << 12)->Arg(1 << 20);
BENCHMARK(BM_normalize<normalize_omp>)->Name("normalize/omp")->Arg(1 << 12)->Arg(1 << 20);
BENCHMARK(BM_surrogate<surrogate_terms_serial>)->Name("surrogate/serial")->Arg(1 << 12)->Arg(1 << 20);
BENCHMARK(BM_surrogate<surrogate_terms_omp>)->Name("surrogate/omp")->Arg(1 << 12)->Arg(1 << 20);

BENCHMARK_MAIN();

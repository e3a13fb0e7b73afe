// SPDX-License-Identifier: Apache-2.0
#include <kestrel/similarity_kernels.hpp>

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace
{
constexpr std::size_t dim = 256;

struct Fixture
{
    std::vector<float> query;
    std::vector<float> matrix;
    std::vector<float> out;

    explicit Fixture(std::size_t rows): query(dim), matrix(rows * dim), out(rows)
    {
        std::mt19937 rng(42);
        std::normal_distribution<float> normal;
        for (auto& v: query)
            v = normal(rng);
        for (auto& v: matrix)
            v = normal(rng);
    }
};

void BM_CosineSerial(benchmark::State& state)
{
    Fixture f(static_cast<std::size_t>(state.range(0)));
    for (auto _: state)
    {
        kestrel::kernels::cosine_scores_serial(f.query, f.matrix, dim, f.out);
        benchmark::DoNotOptimize(f.out.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_CosineParallel(benchmark::State& state)
{
    Fixture f(static_cast<std::size_t>(state.range(0)));
    for (auto _: state)
    {
        kestrel::kernels::cosine_scores_parallel(f.query, f.matrix, dim, f.out);
        benchmark::DoNotOptimize(f.out.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
    state.counters["threads"] = kestrel::kernels::max_threads();
}

void BM_TopK(benchmark::State& state)
{
    auto const rows = static_cast<std::size_t>(state.range(0));
    Fixture f(rows);
    kestrel::kernels::cosine_scores_serial(f.query, f.matrix, dim, f.out);
    std::vector<std::size_t> keys(rows);
    for (std::size_t i = 0; i < rows; ++i)
        keys[i] = i;
    for (auto _: state)
        benchmark::DoNotOptimize(kestrel::kernels::top_k(f.out, 5, keys));
}
} // namespace

BENCHMARK(BM_CosineSerial)->RangeMultiplier(4)->Range(1 << 10, 1 << 16);
BENCHMARK(BM_CosineParallel)->RangeMultiplier(4)->Range(1 << 10, 1 << 16);
BENCHMARK(BM_TopK)->Arg(1 << 14);

BENCHMARK_MAIN();

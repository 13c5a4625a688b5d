// Serial reference vs OpenMP kernels on network-sized layers.
#include <benchmark/benchmark.h>

#include <random>

#include "dunet/kernels.hpp"

using namespace dunet;
using kernels::Padding;

namespace {

Tensor random_tensor(Shape s, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> d(-1, 1);
    Tensor t(s);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

struct ConvLayer {
    Tensor x, w, b, y, dx, dw, db;
    ConvLayer(int n, int c, int o, int hw)
        : x(random_tensor({n, c, hw, hw}, 1)),
          w(random_tensor({o, c, 3, 3}, 2)),
          b(random_tensor({o, 1, 1, 1}, 3)),
          y({n, o, hw, hw}),
          dx({n, c, hw, hw}),
          dw({o, c, 3, 3}),
          db({o, 1, 1, 1}) {}
};

void BM_ConvForwardRef(benchmark::State& st) {
    ConvLayer l(1, static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), static_cast<int>(st.range(2)));
    for (auto _ : st) {
        kernels::ref::conv2d_forward(l.x, l.w, &l.b, Padding::same, 1, l.y);
        benchmark::DoNotOptimize(l.y.raw());
    }
}

void BM_ConvForwardOmp(benchmark::State& st) {
    ConvLayer l(1, static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), static_cast<int>(st.range(2)));
    for (auto _ : st) {
        kernels::conv2d_forward(l.x, l.w, &l.b, Padding::same, 1, l.y);
        benchmark::DoNotOptimize(l.y.raw());
    }
}

void BM_ConvBackwardRef(benchmark::State& st) {
    ConvLayer l(1, static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), static_cast<int>(st.range(2)));
    for (auto _ : st) {
        kernels::ref::conv2d_backward(l.x, l.w, l.y, Padding::same, 1, &l.dx, &l.dw, &l.db);
        benchmark::DoNotOptimize(l.dx.raw());
    }
}

void BM_ConvBackwardOmp(benchmark::State& st) {
    ConvLayer l(1, static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), static_cast<int>(st.range(2)));
    for (auto _ : st) {
        kernels::conv2d_backward(l.x, l.w, l.y, Padding::same, 1, &l.dx, &l.dw, &l.db);
        benchmark::DoNotOptimize(l.dx.raw());
    }
}

void BM_UpsampleForwardRef(benchmark::State& st) {
    const int c = static_cast<int>(st.range(0));
    const Tensor x = random_tensor({1, c, 32, 32}, 4);
    const Tensor w = random_tensor({c, c / 2, 2, 2}, 5);
    Tensor y;
    for (auto _ : st) {
        kernels::ref::upsample2x_forward(x, w, nullptr, y);
        benchmark::DoNotOptimize(y.raw());
    }
}

void BM_UpsampleForwardOmp(benchmark::State& st) {
    const int c = static_cast<int>(st.range(0));
    const Tensor x = random_tensor({1, c, 32, 32}, 4);
    const Tensor w = random_tensor({c, c / 2, 2, 2}, 5);
    Tensor y;
    for (auto _ : st) {
        kernels::upsample2x_forward(x, w, nullptr, y);
        benchmark::DoNotOptimize(y.raw());
    }
}

}  // namespace

// (in channels, out channels, spatial extent) of desk-scale network layers.
BENCHMARK(BM_ConvForwardRef)->Args({8, 8, 128})->Args({32, 32, 32});
BENCHMARK(BM_ConvForwardOmp)->Args({8, 8, 128})->Args({32, 32, 32})->Args({64, 64, 16});
BENCHMARK(BM_ConvBackwardRef)->Args({8, 8, 128})->Args({32, 32, 32});
BENCHMARK(BM_ConvBackwardOmp)->Args({8, 8, 128})->Args({32, 32, 32})->Args({64, 64, 16});
BENCHMARK(BM_UpsampleForwardRef)->Arg(32);
BENCHMARK(BM_UpsampleForwardOmp)->Arg(32);

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "hkd/analysis.hpp"
#include "hkd/koopman.hpp"
#include "hkd/netarch.hpp"
#include "hkd/rng.hpp"
#include "hkd/tensor.hpp"
#include "hkd/trainer.hpp"

using hkd::Rng;
using hkd::Shape;
using hkd::Tensor;

namespace {

Tensor random_tensor(const Shape& s, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(hkd::shape_numel(s));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return Tensor::from_data(s, std::move(v));
}

void BM_BlockExp(benchmark::State& state) {
    double a = 0.3, b = -1.7, dt = 0.8;
    for (auto _ : state) {
        auto e = hkd::block_exp(a, b, dt);
        benchmark::DoNotOptimize(e);
    }
}
BENCHMARK(BM_BlockExp);

void BM_Evolve(benchmark::State& state) {
    int d = static_cast<int>(state.range(0));
    hkd::KoopmanLevelOp op = hkd::KoopmanLevelOp::zeros(1, d, 16, 16);
    Rng rng(1);
    for (auto& v : op.alpha.vec()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto& v : op.beta.vec()) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    Tensor z = random_tensor({2, d, 16, 16}, 2);
    for (auto _ : state) {
        Tensor out = hkd::evolve(z, op, -2.98f);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * z.numel());
}
BENCHMARK(BM_Evolve)->Arg(8)->Arg(32);

void BM_Conv2d(benchmark::State& state) {
    int c = static_cast<int>(state.range(0));
    Tensor x = random_tensor({4, c, 16, 16}, 3);
    Tensor k = random_tensor({c, c, 3, 3}, 4);
    Tensor b = random_tensor({c}, 5);
    for (auto _ : state) {
        Tensor out = hkd::conv2d(x, k, b, 1, 1);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * 4 * c * 16 * 16);
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16);

void BM_EncodeDecode(benchmark::State& state) {
    hkd::ModelConfig cfg;
    cfg.image_channels = 1;
    cfg.image_size = 16;
    cfg.levels = 3;
    cfg.latent_channels = {4, 8, 12};
    cfg.hidden_widths = {8, 16, 24};
    cfg.seed = 6;
    hkd::HkdModel model(cfg);
    Tensor x = random_tensor({1, 1, 16, 16}, 7);
    for (auto _ : state) {
        Tensor out = model.decode(model.encode(x, 3.0f));
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_EncodeDecode);

void BM_FrechetGaussian(benchmark::State& state) {
    int d = static_cast<int>(state.range(0));
    Tensor a = random_tensor({256, d}, 8);
    Tensor b = random_tensor({256, d}, 9);
    for (auto _ : state) {
        double fd = hkd::frechet_gaussian(a, b);
        benchmark::DoNotOptimize(fd);
    }
}
BENCHMARK(BM_FrechetGaussian)->Arg(16)->Arg(64);

}  // namespace

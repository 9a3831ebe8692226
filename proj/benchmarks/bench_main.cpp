#include "corefusion/autodiff.hpp"
#include "corefusion/losses.hpp"
#include "corefusion/model.hpp"
#include "corefusion/trainer.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace corefusion;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape4 shape)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(shape);
    for (double& v : t.span())
        v = u(rng);
    return t;
}

ImageTensor random_image(std::mt19937_64& rng, int c, int h, int w)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageTensor img(c, h, w);
    for (double& v : img.values())
        v = u(rng);
    return img;
}

// 3x3 same-padding convolution, 32 -> 32 channels, batch 8; argument is the spatial size.
void BM_Conv2dForward(benchmark::State& state)
{
    const int size = int(state.range(0));
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor(rng, {8, 32, size, size});
    const Tensor w = random_tensor(rng, {32, 32, 3, 3});
    for (auto _ : state) {
        ad::Graph g;
        const ad::Var y = ad::conv2d(g, g.reference(x), g.reference(w), {}, 1, 1);
        benchmark::DoNotOptimize(g.value(y).data());
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(6)->Arg(12)->Arg(24)->Arg(48)->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state)
{
    const int size = int(state.range(0));
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor(rng, {8, 32, size, size});
    const Tensor w = random_tensor(rng, {32, 32, 3, 3});
    const Tensor zero({8, 32, size, size});
    for (auto _ : state) {
        ad::Graph g;
        const ad::Var xv = g.variable(x);
        const ad::Var wv = g.variable(w);
        const ad::Var y = mse_node(g, ad::conv2d(g, xv, wv, {}, 1, 1), zero);
        g.backward(y);
        benchmark::DoNotOptimize(g.grad(wv));
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(12)->Arg(48)->Unit(benchmark::kMicrosecond);

void BM_SsimWindowed(benchmark::State& state)
{
    std::mt19937_64 rng(3);
    const ImageTensor x = random_image(rng, 1, 48, 48);
    const ImageTensor y = random_image(rng, 1, 48, 48);
    for (auto _ : state)
        benchmark::DoNotOptimize(ssim(x, y, SsimConstants::for_range(1.0), SsimMode::windowed));
}
BENCHMARK(BM_SsimWindowed)->Unit(benchmark::kMicrosecond);

void BM_ContrastiveLoss(benchmark::State& state)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    std::vector<Projection> zr(8, Projection(64)), zt(8, Projection(64));
    for (auto* side : {&zr, &zt})
        for (auto& z : *side)
            for (double& v : z)
                v = n(rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(contrastive_loss(zr, zt, 1.0));
}
BENCHMARK(BM_ContrastiveLoss)->Unit(benchmark::kMicrosecond);

// Default model, batch 8 at 48x48: inference forward of both paths.
void BM_ForwardFull(benchmark::State& state)
{
    std::mt19937_64 rng(5);
    const Parameters params = init_parameters(ModelConfig{});
    const Tensor rgb = random_tensor(rng, {8, 3, 48, 48});
    const Tensor lr = random_tensor(rng, {8, 1, 6, 6});
    for (auto _ : state) {
        ad::Graph g;
        ParameterBinding bind(g, params, false);
        ForwardContext ctx{bind};
        const GraphFullOutput out = forward_full(ctx, g.reference(rgb), g.reference(lr));
        benchmark::DoNotOptimize(g.value(out.pred).data());
    }
}
BENCHMARK(BM_ForwardFull)->Unit(benchmark::kMillisecond);

// One optimizer step of the full objective (beta = 1), batch 8 at 48x48.
void BM_TrainStep(benchmark::State& state)
{
    std::mt19937_64 rng(6);
    Parameters params = init_parameters(ModelConfig{});
    const Tensor rgb = random_tensor(rng, {8, 3, 48, 48});
    const Tensor lr = random_tensor(rng, {8, 1, 6, 6});
    const Tensor target = random_tensor(rng, {8, 1, 48, 48});
    TrainConfig config;
    config.loss_weights.beta = 1.0;
    AdamState adam;
    for (auto _ : state) {
        ad::Graph g;
        ParameterBinding bind(g, params, true);
        std::vector<NormStatsUpdate> stats;
        ForwardContext ctx{bind, ad::BatchNormMode::training, &stats};
        const GraphFullOutput out = forward_full(ctx, g.reference(rgb), g.reference(lr));
        const GraphLoss loss = total_loss(g, out.pred, target, std::pair{out.z_rgb, out.z_thermal}, config.loss_weights,
                                          params.config.temperature);
        g.backward(loss.total);
        adam_step(params, bind.gradients(), adam, config);
        apply_norm_stats(params, stats);
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();

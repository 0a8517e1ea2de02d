#include <benchmark/benchmark.h>

#include "poselift/complexity.hpp"
#include "poselift/model.hpp"
#include "poselift/nn.hpp"
#include "poselift/rng.hpp"

using namespace poselift;

namespace {

Tensor random_input(std::vector<int64_t> shape, uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

ModelConfig bench_config(int blocks, int channels, bool dense = false) {
    ModelConfig cfg;
    cfg.num_joints = 17;
    cfg.blocks = blocks;
    cfg.kernel_width = 3;
    cfg.channels = channels;
    cfg.dropout_p = 0.0f;
    cfg.dense_mode = dense;
    return cfg;
}

} // namespace

static void BM_Conv1dDilated(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    Conv1dSpec spec;
    spec.in_channels = channels;
    spec.out_channels = channels;
    spec.kernel_width = 3;
    spec.dilation = 9;
    Tensor input = random_input({1, channels, 512}, 1);
    Tensor weights = random_input({channels, channels, 3}, 2);
    for (auto _ : state) {
        Tensor out = conv1d_forward(input, weights, Tensor(), spec);
        benchmark::DoNotOptimize(out.data());
    }
    const int64_t frames = spec.output_length(512);
    state.SetItemsProcessed(state.iterations() * frames);
}
BENCHMARK(BM_Conv1dDilated)->Arg(128)->Arg(512)->Arg(1024);

static void BM_ForwardSequence(benchmark::State& state) {
    const int blocks = static_cast<int>(state.range(0));
    TemporalModel model = TemporalModel::build(bench_config(blocks, 256), 3);
    const int64_t rf = model.receptive_field();
    Tensor input = random_input({1, 34, rf + 255}, 4);
    for (auto _ : state) {
        Tensor out = model.forward(input);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * 256); // output frames
}
BENCHMARK(BM_ForwardSequence)->Arg(2)->Arg(3)->Arg(4);

static void BM_SingleFrameLayerByLayer(benchmark::State& state) {
    TemporalModel model = TemporalModel::build(bench_config(2, static_cast<int>(state.range(0))), 5);
    Tensor input = random_input({8, 34, model.receptive_field()}, 6);
    for (auto _ : state) {
        Tensor out = model.forward(input);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_SingleFrameLayerByLayer)->Arg(256)->Arg(1024);

static void BM_SingleFrameStrided(benchmark::State& state) {
    TemporalModel model = TemporalModel::build(bench_config(2, static_cast<int>(state.range(0))), 5);
    Tensor input = random_input({8, 34, model.receptive_field()}, 6);
    for (auto _ : state) {
        Tensor out = model.forward_strided_single(input);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_SingleFrameStrided)->Arg(256)->Arg(1024);

static void BM_CostEstimate(benchmark::State& state) {
    const ModelConfig cfg = bench_config(4, 1024);
    for (auto _ : state) {
        CostReport rep = estimate(cfg);
        benchmark::DoNotOptimize(rep.total_flops_per_frame);
    }
}
BENCHMARK(BM_CostEstimate);

BENCHMARK_MAIN();

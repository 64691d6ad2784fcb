// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the hot paths: plain routing, expert dispatch, the
// recorded encoder forward, and one full optimization step.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "fped/diffusion.hpp"
#include "fped/experts.hpp"
#include "fped/losses.hpp"
#include "fped/rng.hpp"
#include "fped/router.hpp"
#include "fped/tape.hpp"
#include "fped/trainer.hpp"

namespace {

using namespace fped;

Tensor gauss_tensor(Rng& rng, const std::vector<int>& shape, double s = 1.0) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = s * rng.gauss();
    return t;
}

std::vector<std::uint8_t> random_labels(Rng& rng, int n) {
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<std::uint8_t>(1 + rng.uniform_int(num_networks));
    return labels;
}

FeatureVector random_features(Rng& rng, int n) {
    FeatureVector fv;
    fv.x.resize(static_cast<std::size_t>(n));
    for (auto& v : fv.x) v = rng.gauss();
    fv.labels = random_labels(rng, n);
    return fv;
}

void BM_RouteFull(benchmark::State& state) {
    Rng rng(1);
    const int L = feature_dim, E = num_networks;
    const Tensor x = gauss_tensor(rng, {L});
    const Tensor w_r = gauss_tensor(rng, {E});
    const Tensor bias = gauss_tensor(rng, {L, E}, 0.5);
    const std::vector<std::uint8_t> labels = random_labels(rng, L);
    const int K = expert_capacity(L, 1.0, E);
    for (auto _ : state) {
        benchmark::DoNotOptimize(route(x, w_r, bias, labels, K));
    }
}
BENCHMARK(BM_RouteFull);

void BM_Dispatch(benchmark::State& state) {
    Rng rng(2);
    const int L = feature_dim, E = num_networks;
    const Tensor x = gauss_tensor(rng, {L});
    const Tensor w_r = gauss_tensor(rng, {E});
    const Tensor bias = gauss_tensor(rng, {L, E}, 0.5);
    const int K = expert_capacity(L, 1.0, E);
    const RoutingState rs = route(x, w_r, bias, random_labels(rng, L), K);
    for (auto _ : state) {
        benchmark::DoNotOptimize(dispatch(x, rs.p_raw, K));
    }
}
BENCHMARK(BM_Dispatch);

void BM_EncoderForward(benchmark::State& state) {
    Rng rng(3);
    EncoderConfig ec;  // production geometry on the full 4096-length input
    EncoderModel model;
    Rng init = rng.split(1);
    model.init(ec, init);
    const FeatureVector fv = random_features(rng, ec.feature_len);
    for (auto _ : state) {
        Tape tape;
        const BoundParams bp = bind_params(tape, model.params);
        benchmark::DoNotOptimize(model.forward(tape, bp, fv));
    }
}
BENCHMARK(BM_EncoderForward);

void BM_TrainStep(benchmark::State& state) {
    Rng rng(4);
    EncoderConfig ec;
    EncoderModel model;
    Rng init = rng.split(1);
    model.init(ec, init);
    init_denoiser(model.params, ec.embed_dim, 64, 16, init);
    const DiffusionSchedule sched = DiffusionSchedule::linear(50);
    Adam opt(1e-3);
    const int batch = 4;
    std::vector<FeatureVector> fvs;
    std::vector<Tensor> c_text, c_img;
    for (int i = 0; i < batch; ++i) {
        fvs.push_back(random_features(rng, ec.feature_len));
        c_text.push_back(gauss_tensor(rng, {ec.embed_dim}));
        c_img.push_back(gauss_tensor(rng, {ec.embed_dim}));
    }
    Tensor ct_m({batch, ec.embed_dim}), ci_m({batch, ec.embed_dim});
    for (int i = 0; i < batch; ++i)
        for (int j = 0; j < ec.embed_dim; ++j) {
            ct_m.at(i, j) = c_text[static_cast<std::size_t>(i)][j];
            ci_m.at(i, j) = c_img[static_cast<std::size_t>(i)][j];
        }
    Rng noise(5);
    for (auto _ : state) {
        Tape tape;
        const BoundParams bp = bind_params(tape, model.params);
        std::vector<int> bt, bi, dp;
        for (int i = 0; i < batch; ++i) {
            const ForwardOutput fo = model.forward(tape, bp, fvs[static_cast<std::size_t>(i)]);
            bt.push_back(fo.text.b);
            bi.push_back(fo.image.b);
            const NoiseDraw draw = draw_noise(sched, ec.embed_dim, noise);
            dp.push_back(tape.reshape(
                build_diffusion_nodes(tape, bp, sched, c_img[static_cast<std::size_t>(i)],
                                      fo.image.b, draw)
                    .loss,
                {1}));
        }
        const int ct = tape.leaf(ct_m);
        const int ci = tape.leaf(ci_m);
        int total = tape.add(build_cosine_loss(tape, tape.stack_rows(bt), ct),
                             build_mse_loss(tape, tape.stack_rows(bi), ci));
        total = tape.add(total, tape.mean(tape.concat(dp)));
        tape.backward(total);
        opt.step(model.params, tape, bp);
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

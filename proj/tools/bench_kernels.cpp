// SPDX-License-Identifier: Apache-2.0
//
// Times the serial reference kernels against the OpenMP variants, plus a
// whole-model forward/backward, and prints per-kernel speedups.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <omp.h>

#include "cyb/kernels.hpp"
#include "cyb/model.hpp"
#include "cyb/rng.hpp"
#include "cyb/trainer.hpp"

using cyb::SplitMix64;

namespace {

double time_ms(const std::function<void()>& fn, int iters) {
    fn();  // warm up
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto end = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(end - start).count() / iters;
}

void report(const std::string& name, double serial_ms, double omp_ms) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name.c_str(), serial_ms, omp_ms,
                serial_ms / omp_ms);
}

std::vector<float> random_vec(std::size_t n, SplitMix64& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.next_normal());
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    int iters = 10;
    if (argc > 1) iters = std::atoi(argv[1]);
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    SplitMix64 rng(42);
    {
        const int m = 2048, n = 256, k = 256;
        auto x = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto w = random_vec(static_cast<std::size_t>(n) * k, rng);
        std::vector<float> y(static_cast<std::size_t>(m) * n);
        report("linear_forward 2048x256x256",
               time_ms([&] { cyb::kernels::ref::linear_forward(y.data(), x.data(), w.data(), m, n, k); }, iters),
               time_ms([&] { cyb::kernels::linear_forward(y.data(), x.data(), w.data(), m, n, k); }, iters));
        std::vector<float> dw(static_cast<std::size_t>(n) * k);
        report("linear_backward_weight",
               time_ms([&] { cyb::kernels::ref::linear_backward_weight(dw.data(), y.data(), x.data(), m, n, k); }, iters),
               time_ms([&] { cyb::kernels::linear_backward_weight(dw.data(), y.data(), x.data(), m, n, k); }, iters));
    }
    {
        const int t_len = 512, heads = 4, hd = 16;
        const int dim = heads * hd;
        auto q = random_vec(static_cast<std::size_t>(t_len) * dim, rng);
        auto k = random_vec(static_cast<std::size_t>(t_len) * dim, rng);
        auto v = random_vec(static_cast<std::size_t>(t_len) * dim, rng);
        std::vector<float> out(static_cast<std::size_t>(t_len) * dim);
        std::vector<float> att(static_cast<std::size_t>(heads) * t_len * t_len);
        report("attention_forward T=512",
               time_ms([&] { cyb::kernels::ref::attention_forward(out.data(), att.data(), q.data(), k.data(), v.data(), t_len, heads, hd); }, iters),
               time_ms([&] { cyb::kernels::attention_forward(out.data(), att.data(), q.data(), k.data(), v.data(), t_len, heads, hd); }, iters));
        std::vector<float> dq(q.size()), dk(k.size()), dv(v.size()), ds(att.size());
        report("attention_backward T=512",
               time_ms([&] { cyb::kernels::ref::attention_backward(dq.data(), dk.data(), dv.data(), ds.data(), out.data(), att.data(), q.data(), k.data(), v.data(), t_len, heads, hd); }, iters),
               time_ms([&] { cyb::kernels::attention_backward(dq.data(), dk.data(), dv.data(), ds.data(), out.data(), att.data(), q.data(), k.data(), v.data(), t_len, heads, hd); }, iters));
    }
    {
        const int rows = 8192, dim = 128;
        auto x = random_vec(static_cast<std::size_t>(rows) * dim, rng);
        auto w = random_vec(dim, rng);
        std::vector<float> y(x.size()), rstd(rows);
        report("rmsnorm_forward 8192x128",
               time_ms([&] { cyb::kernels::ref::rmsnorm_forward(y.data(), rstd.data(), x.data(), w.data(), rows, dim, 1e-5f); }, iters),
               time_ms([&] { cyb::kernels::rmsnorm_forward(y.data(), rstd.data(), x.data(), w.data(), rows, dim, 1e-5f); }, iters));
    }

    // Whole model, one train-style step on a pause-expanded batch.
    {
        cyb::TrainConfig cfg;
        cfg.condition = cyb::Condition::Cyb;
        cfg.loss.variant = cyb::LossVariant::AP;
        cfg.loss.w_max = 4;
        cfg.loss.omega = cyb::make_stop_prior({0.0, 0.0, 0.0, 1.0});
        cfg.loss.gamma = cyb::make_discount(cyb::DiscountKind::Constant, 1.0, 4);
        cfg.model.vocab_size = 64;
        cfg.model.dim = 64;
        cfg.model.n_layers = 2;
        cfg.model.n_heads = 4;
        cfg.model.max_pause_slots = 3;
        cfg.model.seed = 3;
        cfg.dk.vocab_size = 64;
        cfg.dk.dk_token_id = 63;
        cfg.packing.raw_len = 64;
        cfg.packing.n_pauses = 3;
        const cyb::VocabLayout layout = cyb::vocab_layout_for(cfg);

        SplitMix64 tok_rng(7);
        std::vector<cyb::ExpandedSequence> seqs;
        for (int s = 0; s < 4; ++s) {
            std::vector<cyb::TokenId> raw(cfg.packing.raw_len);
            for (auto& id : raw) {
                id = static_cast<cyb::TokenId>(tok_rng.next_below(layout.content_size()));
            }
            seqs.push_back(cyb::expand_constant(raw, 3, layout));
        }
        const cyb::ModelBatch batch = cyb::make_model_batch(seqs);

        cyb::Model<float> model(cfg.model, cfg.dk);
        auto step = [&](bool parallel) {
            model.set_parallel(parallel);
            cyb::compute_batch(model, batch, seqs, cfg.loss, false, true);
        };
        report("model fwd+bwd 4x256 slots",
               time_ms([&] { step(false); }, std::max(1, iters / 2)),
               time_ms([&] { step(true); }, std::max(1, iters / 2)));
    }
    return 0;
}

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <vector>

#include "cyb/model.hpp"
#include "cyb/trainer.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cyb;

namespace {

constexpr int kVocabSize = 32;
const VocabLayout kLayout = VocabLayout::make(kVocabSize, 3);

ModelConfig small_config(bool pause_offset = false, std::uint64_t seed = 11) {
    ModelConfig cfg;
    cfg.vocab_size = kVocabSize;
    cfg.dim = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.max_pause_slots = 3;
    cfg.use_pause_key_offset = pause_offset;
    cfg.seed = seed;
    return cfg;
}

DKConfig small_dk() { return DKConfig{kVocabSize - 1, 0.9, kVocabSize}; }

std::vector<TokenId> random_raw(int len, SplitMix64& rng) {
    std::vector<TokenId> raw(len);
    for (auto& id : raw) id = static_cast<TokenId>(rng.next_below(kLayout.content_size()));
    return raw;
}

LossConfig ap_uniform(int w) {
    LossConfig cfg;
    cfg.variant = LossVariant::AP;
    cfg.w_max = w;
    cfg.omega = make_stop_prior(std::vector<double>(w, 1.0 / w));
    cfg.gamma = make_discount(DiscountKind::Constant, 1.0, w);
    return cfg;
}

}  // namespace

TEST_CASE("causality: perturbing a slot never changes earlier outputs") {
    SplitMix64 rng(100);
    Model<float> model(small_config(), small_dk());
    const auto raw = random_raw(5, rng);
    std::vector<ExpandedSequence> seqs{expand_constant(raw, 3, kLayout)};
    ModelBatch batch = make_model_batch(seqs);
    model.forward(batch);
    const std::vector<float> base = model.probs();

    const int perturb_slot = 10;
    batch.ids[perturb_slot] = (batch.ids[perturb_slot] + 1) % kLayout.content_size();
    model.forward(batch);
    const std::vector<float>& changed = model.probs();

    const int vocab = kVocabSize;
    CHECK(std::memcmp(base.data(), changed.data(),
                      static_cast<std::size_t>(perturb_slot) * vocab * sizeof(float)) == 0);
    // And the perturbed suffix does change.
    bool any_diff = false;
    for (std::size_t i = static_cast<std::size_t>(perturb_slot) * vocab; i < base.size(); ++i) {
        if (base[i] != changed[i]) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("pause slots with equal positions but distinct ids differ") {
    Model<float> model(small_config(), small_dk());
    std::vector<ExpandedSequence> seqs{expand_constant({7}, 3, kLayout)};
    const ModelBatch batch = make_model_batch(seqs);
    model.forward(batch);
    const auto& probs = model.probs();
    // Slots 1 and 2 are <pause1>, <pause2>: same position index, different ids.
    CHECK(seqs[0].positions[1] == seqs[0].positions[2]);
    double diff = 0.0;
    for (int j = 0; j < kVocabSize; ++j) {
        diff += std::abs(static_cast<double>(probs[1 * kVocabSize + j]) -
                         static_cast<double>(probs[2 * kVocabSize + j]));
    }
    CHECK(diff > 1e-6);
}

TEST_CASE("zero pause key offsets match the offset-free model at init") {
    Model<float> plain(small_config(false), small_dk());
    Model<float> offset(small_config(true), small_dk());
    SplitMix64 rng(4);
    std::vector<ExpandedSequence> seqs{expand_constant(random_raw(6, rng), 3, kLayout)};
    const ModelBatch batch = make_model_batch(seqs);
    plain.forward(batch);
    offset.forward(batch);
    CHECK(std::memcmp(plain.probs().data(), offset.probs().data(),
                      plain.probs().size() * sizeof(float)) == 0);
}

TEST_CASE("rotary phases depend on positions only through differences") {
    Model<double> model(small_config(), small_dk());
    SplitMix64 rng(8);
    std::vector<ExpandedSequence> seqs{expand_constant(random_raw(6, rng), 3, kLayout)};
    ModelBatch batch = make_model_batch(seqs);
    model.forward(batch);
    const std::vector<double> base = model.probs();

    for (auto& p : batch.positions) p += 11;  // rigid translation
    model.forward(batch);
    const std::vector<double>& shifted = model.probs();
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(std::abs(base[i] - shifted[i]) < 1e-10);
    }
}

TEST_CASE("determinism: repeated runs and serial vs parallel are bit-identical") {
    SplitMix64 rng(21);
    const auto raw = random_raw(8, rng);
    std::vector<ExpandedSequence> seqs{expand_constant(raw, 3, kLayout)};
    const ModelBatch batch = make_model_batch(seqs);

    Model<float> a(small_config(), small_dk());
    Model<float> b(small_config(), small_dk());
    a.set_parallel(true);
    b.set_parallel(false);
    a.forward(batch);
    a.forward(batch);  // rerun on the same state
    b.forward(batch);
    CHECK(std::memcmp(a.probs().data(), b.probs().data(),
                      a.probs().size() * sizeof(float)) == 0);

    // Backward too: gradients must agree bitwise across execution modes.
    std::vector<float> dlogits(a.probs().size());
    SplitMix64 grng(99);
    for (auto& g : dlogits) g = static_cast<float>(grng.next_normal() * 0.01);
    a.zero_grads();
    a.backward(batch, dlogits);
    b.zero_grads();
    b.backward(batch, dlogits);
    auto pa = a.params();
    auto pb = b.params();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(std::memcmp(pa[i].grad, pb[i].grad, pa[i].size * sizeof(float)) == 0);
    }
}

TEST_CASE("full-model gradients match central finite differences (64-bit)") {
    SplitMix64 rng(31);
    ModelConfig mcfg = small_config(true, 5);
    Model<double> model(mcfg, small_dk());
    std::vector<ExpandedSequence> seqs{expand_constant(random_raw(5, rng), 3, kLayout),
                                       expand_constant(random_raw(4, rng), 3, kLayout)};
    const ModelBatch batch = make_model_batch(seqs);
    const double h = 1e-5;

    auto check_variant = [&](const LossConfig& loss_cfg) {
        compute_batch(model, batch, seqs, loss_cfg, false, true);
        std::vector<std::vector<double>> analytic;
        for (auto& ref : model.params()) {
            analytic.emplace_back(ref.grad, ref.grad + ref.size);
        }
        auto params = model.params();
        long checked = 0, worst_name = -1;
        double worst = 0.0;
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& ref = params[pi];
            for (std::size_t i = 0; i < ref.size; ++i) {
                const double orig = ref.data[i];
                ref.data[i] = orig + h;
                const double fp = compute_batch(model, batch, seqs, loss_cfg, false, false).loss;
                ref.data[i] = orig - h;
                const double fm = compute_batch(model, batch, seqs, loss_cfg, false, false).loss;
                ref.data[i] = orig;
                const double fd = (fp - fm) / (2 * h);
                const double err = oracles::rel_err(analytic[pi][i], fd, 1e-4);
                if (err > worst) {
                    worst = err;
                    worst_name = static_cast<long>(pi);
                }
                ++checked;
            }
        }
        CAPTURE(checked);
        if (worst_name >= 0) {
            CAPTURE(params[worst_name].name);
        }
        CHECK(worst <= 1e-4);
    };

    SUBCASE("anytime prediction with a uniform stop prior") { check_variant(ap_uniform(4)); }
    SUBCASE("fixed-pause cross-entropy") {
        LossConfig cfg;
        cfg.variant = LossVariant::TBYS;
        cfg.w_max = 4;
        cfg.omega = make_stop_prior({0, 0, 0, 1});
        cfg.gamma = make_discount(DiscountKind::Constant, 1.0, 4);
        check_variant(cfg);
    }
}

TEST_CASE("masked-only batch yields zero gradients") {
    Model<double> model(small_config(), small_dk());
    std::vector<ExpandedSequence> seqs{expand_constant({3}, 3, kLayout)};
    const ModelBatch batch = make_model_batch(seqs);
    const auto stats = compute_batch(model, batch, seqs, ap_uniform(4), false, true);
    CHECK(stats.groups == 0);
    for (auto& ref : model.params()) {
        for (std::size_t i = 0; i < ref.size; ++i) CHECK(ref.grad[i] == 0.0);
    }
}

TEST_CASE("fixed-pause training leaves the DK output row untouched") {
    SplitMix64 rng(67);
    Model<double> model(small_config(), small_dk());
    std::vector<ExpandedSequence> seqs{expand_constant(random_raw(6, rng), 3, kLayout)};
    const ModelBatch batch = make_model_batch(seqs);
    LossConfig cfg;
    cfg.variant = LossVariant::TBYS;
    cfg.w_max = 4;
    cfg.omega = make_stop_prior({0, 0, 0, 1});
    cfg.gamma = make_discount(DiscountKind::Constant, 1.0, 4);
    compute_batch(model, batch, seqs, cfg, false, true);
    for (auto& ref : model.params()) {
        if (ref.name != "unembed") continue;
        const int dim = model.config().dim;
        const int dk_row = small_dk().dk_token_id;
        double dk_grad = 0.0, other_grad = 0.0;
        for (int j = 0; j < dim; ++j) {
            dk_grad += std::abs(ref.grad[static_cast<std::size_t>(dk_row) * dim + j]);
            other_grad += std::abs(ref.grad[j]);
        }
        CHECK(dk_grad == 0.0);
        CHECK(other_grad > 0.0);
    }
}

TEST_CASE("model batch validation") {
    Model<float> model(small_config(), small_dk());
    std::vector<ExpandedSequence> seqs{expand_constant({1, 2}, 3, kLayout)};
    ModelBatch batch = make_model_batch(seqs);
    batch.ids[0] = kVocabSize + 5;
    CHECK_THROWS_AS(model.forward(batch), std::invalid_argument);
    batch = make_model_batch(seqs);
    batch.positions[0] = -1;
    CHECK_THROWS_AS(model.forward(batch), std::invalid_argument);
    batch = make_model_batch(seqs);
    batch.pause_slots[1] = 9;
    CHECK_THROWS_AS(model.forward(batch), std::invalid_argument);
}

TEST_CASE("step outputs assemble groups with a pinned final abstention") {
    Model<float> model(small_config(), small_dk());
    std::vector<ExpandedSequence> seqs{expand_constant({1, 2, 3}, 3, kLayout)};
    const ModelBatch batch = make_model_batch(seqs);
    model.forward(batch);
    const StepOutputs outs = model.collect_step_outputs(batch, seqs);
    REQUIRE(outs.groups.size() == 3);
    for (const auto& g : outs.groups) {
        CHECK(g.d.size() == 4);
        CHECK(g.d.back() == 0.0);
        for (double d : g.d) {
            CHECK(d >= 0.0);
            CHECK(d <= 1.0);
        }
        if (g.target == kMaskId) {
            CHECK(g.t.empty());
        } else {
            CHECK(g.t.size() == 4);
            for (double t : g.t) {
                CHECK(t >= 0.0);
                CHECK(t <= 1.0);
            }
        }
    }
    CHECK(outs.groups[0].context == 1);
    CHECK(outs.groups[0].target == 2);
    CHECK(outs.groups[2].target == kMaskId);
    // With the 0.9 DK prior shift and random weights, abstention starts high.
    CHECK(outs.groups[0].d[0] > 0.5);
}

// SPDX-License-Identifier: Apache-2.0

#include "cyb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cyb/kernels.hpp"
#include "cyb/rng.hpp"

namespace cyb {

Condition condition_from_string(const std::string& s) {
    if (s == "baseline") return Condition::Baseline;
    if (s == "tbys") return Condition::Tbys;
    if (s == "cyb") return Condition::Cyb;
    throw std::invalid_argument("unknown condition: " + s);
}

std::string to_string(Condition c) {
    switch (c) {
        case Condition::Baseline: return "baseline";
        case Condition::Tbys: return "tbys";
        case Condition::Cyb: return "cyb";
    }
    return "cyb";
}

VocabLayout vocab_layout_for(const TrainConfig& cfg) {
    return VocabLayout::make(cfg.model.vocab_size, cfg.model.max_pause_slots);
}

void validate_train_config(const TrainConfig& cfg) {
    validate_model_config(cfg.model);
    validate_dk_config(cfg.dk);
    validate_loss_config(cfg.loss);
    validate_synth_spec(cfg.data);
    if (cfg.loss.w_max > 8) {
        throw std::invalid_argument("loss.w_max above 8 is not supported");
    }
    if (cfg.dk.vocab_size != cfg.model.vocab_size) {
        throw std::invalid_argument("dk.vocab_size must match model.vocab_size");
    }
    const VocabLayout layout = vocab_layout_for(cfg);
    if (cfg.dk.dk_token_id != layout.dk_token()) {
        throw std::invalid_argument("dk.dk_token_id must be the top vocabulary id");
    }
    if (cfg.packing.raw_len < 2) {
        throw std::invalid_argument("packing.raw_len must be >= 2");
    }
    if (cfg.batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (cfg.total_steps < 1) throw std::invalid_argument("train.total_steps must be >= 1");
    if (cfg.warmup_steps < 0 || cfg.warmup_steps > cfg.total_steps) {
        throw std::invalid_argument("train.warmup_steps must lie in [0, total_steps]");
    }
    if (!(cfg.lr_max > 0.0)) throw std::invalid_argument("train.lr_max must be > 0");
    if (cfg.eval_interval < 1) throw std::invalid_argument("train.eval_interval must be >= 1");
    if (cfg.eval_tokens < 1) throw std::invalid_argument("train.eval_tokens must be >= 1");

    switch (cfg.condition) {
        case Condition::Baseline:
            if (cfg.packing.n_pauses != 0) {
                throw std::invalid_argument("packing.n_pauses: baseline runs without pauses");
            }
            if (cfg.loss.variant != LossVariant::TBYS || cfg.loss.w_max != 1) {
                throw std::invalid_argument(
                    "loss.variant: baseline uses the single-step cross-entropy (TBYS, w_max=1)");
            }
            break;
        case Condition::Tbys:
            if (cfg.loss.variant != LossVariant::TBYS) {
                throw std::invalid_argument("loss.variant: tbys condition requires variant TBYS");
            }
            if (cfg.packing.recipe != Recipe::Constant) {
                throw std::invalid_argument("packing.recipe: tbys uses constant pause counts");
            }
            if (cfg.packing.n_pauses != cfg.loss.w_max - 1) {
                throw std::invalid_argument("packing.n_pauses must equal loss.w_max - 1");
            }
            // Ordinary cross-entropy at the final pause step: no early world
            // stops and no discounting.
            if (cfg.loss.omega.omega.back() != 1.0) {
                throw std::invalid_argument(
                    "loss.omega: tbys reads out at the final step only");
            }
            if (!cfg.loss.gamma.is_unit()) {
                throw std::invalid_argument("loss.gamma: tbys uses an undiscounted loss");
            }
            break;
        case Condition::Cyb:
            if (cfg.loss.variant == LossVariant::TBYS) {
                throw std::invalid_argument(
                    "loss.variant: cyb condition requires AP, VA, or DP");
            }
            if (cfg.packing.recipe == Recipe::Constant &&
                cfg.packing.n_pauses != cfg.loss.w_max - 1) {
                throw std::invalid_argument("packing.n_pauses must equal loss.w_max - 1");
            }
            if (cfg.packing.recipe == Recipe::Sampled &&
                cfg.loss.variant != LossVariant::AP) {
                throw std::invalid_argument(
                    "packing.recipe: rho-based variants require constant pause counts");
            }
            break;
    }
    if (cfg.model.max_pause_slots < cfg.packing.n_pauses ||
        cfg.model.max_pause_slots < cfg.loss.w_max - 1) {
        throw std::invalid_argument("model.max_pause_slots too small for the pause pipeline");
    }
    const SynthVocab task_vocab = SynthVocab::from(cfg.data);
    if (task_vocab.content_size() > layout.content_size()) {
        throw std::invalid_argument("model.vocab_size too small for the task vocabulary");
    }
}

double lr_at(long step, double lr_max, int warmup_steps, int total_steps) {
    if (step < 0 || step > total_steps) {
        throw std::out_of_range("lr step outside [0, total_steps]");
    }
    if (step < warmup_steps) {
        return lr_max * static_cast<double>(step) / warmup_steps;
    }
    const double lr_min = lr_max * 1e-2;
    if (total_steps == warmup_steps) return lr_max;
    const double progress =
        static_cast<double>(step - warmup_steps) / (total_steps - warmup_steps);
    return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double lr_at(long step, const TrainConfig& cfg) {
    return lr_at(step, cfg.lr_max, cfg.warmup_steps, cfg.total_steps);
}

LossConfig group_loss_config(const LossConfig& base, int w, bool sampled_recipe) {
    if (!sampled_recipe && w == base.w_max) return base;
    LossConfig cfg;
    cfg.variant = base.variant;
    cfg.w_max = w;
    std::vector<double> omega(w, 0.0);
    omega.back() = 1.0;
    cfg.omega = StopPrior{std::move(omega)};
    cfg.gamma.kind = base.gamma.kind;
    cfg.gamma.gamma0 = base.gamma.gamma0;
    cfg.gamma.gamma.assign(base.gamma.gamma.begin(), base.gamma.gamma.begin() + w);
    cfg.rho = base.rho;
    cfg.alpha = base.alpha;
    return cfg;
}

template <typename T>
BatchLossStats compute_batch(Model<T>& model, const ModelBatch& batch,
                             const std::vector<ExpandedSequence>& seqs,
                             const LossConfig& loss_cfg, bool sampled_recipe, bool backward) {
    model.forward(batch);
    const StepOutputs outs = model.collect_step_outputs(batch, seqs);
    const int vocab = model.config().vocab_size;
    const int dk_id = model.dk_config().dk_token_id;

    BatchLossStats stats;
    std::vector<const StepOutputs::Group*> counted;
    std::vector<LossGradients> grads;
    double total = 0.0;
    for (const auto& g : outs.groups) {
        if (g.target == kMaskId) continue;
        const int w = static_cast<int>(g.d.size());
        const LossConfig group_cfg = group_loss_config(loss_cfg, w, sampled_recipe);
        const StepTargets t{g.t};
        const AbstainProfile dk{g.d};
        const LossResult r = loss_value(t, dk, group_cfg);
        total += r.value;
        stats.groups += 1;
        stats.clamped += r.clamped ? 1 : 0;
        stats.kl_violations += r.kl_support_violation ? 1 : 0;
        if (backward) {
            counted.push_back(&g);
            grads.push_back(loss_gradients(t, dk, group_cfg));
        }
    }
    stats.loss = stats.groups > 0 ? total / stats.groups : 0.0;

    if (backward && stats.groups > 0) {
        const double scale = 1.0 / stats.groups;
        const auto& probs = model.probs();
        std::vector<T> dlogits(probs.size(), T(0));
        for (std::size_t gi = 0; gi < counted.size(); ++gi) {
            const auto& g = *counted[gi];
            const auto& grad = grads[gi];
            const int w = static_cast<int>(g.d.size());
            for (int j = 0; j < w; ++j) {
                const double gt = grad.d_t[j] * scale;
                const double gd = grad.d_dk[j] * scale;
                if (gt == 0.0 && gd == 0.0) continue;
                const std::size_t row = static_cast<std::size_t>(g.first_row + j) * vocab;
                const double d_raw = static_cast<double>(probs[row + dk_id]);
                const double denom = std::max(1.0 - d_raw, 1e-12);
                const double t_j =
                    std::min(1.0, static_cast<double>(probs[row + g.target]) / denom);
                for (int v = 0; v < vocab; ++v) {
                    const double y = static_cast<double>(probs[row + v]);
                    double dl = 0.0;
                    if (v != dk_id) {
                        // t is the softmax excluding DK, so the DK logit does
                        // not appear in this term.
                        dl += gt * t_j * ((v == g.target ? 1.0 : 0.0) - y / denom);
                        dl -= gd * d_raw * y;
                    } else {
                        dl += gd * d_raw * (1.0 - y);
                    }
                    dlogits[row + v] += static_cast<T>(dl);
                }
            }
        }
        model.zero_grads();
        model.backward(batch, dlogits);
    }
    return stats;
}

template BatchLossStats compute_batch<float>(Model<float>&, const ModelBatch&,
                                             const std::vector<ExpandedSequence>&,
                                             const LossConfig&, bool, bool);
template BatchLossStats compute_batch<double>(Model<double>&, const ModelBatch&,
                                              const std::vector<ExpandedSequence>&,
                                              const LossConfig&, bool, bool);

ExpandedSequence expand_for_condition(const std::vector<TokenId>& raw, const TrainConfig& cfg,
                                      const VocabLayout& vocab, std::uint64_t seed) {
    if (cfg.packing.recipe == Recipe::Sampled && cfg.condition == Condition::Cyb) {
        return expand_sampled(raw, cfg.loss.omega, vocab, seed);
    }
    return expand_constant(raw, cfg.packing.n_pauses, vocab);
}

EvalSummary summarize_eval(const std::vector<TokenEvalRecord>& records) {
    EvalSummary s;
    s.perplexity = perplexity_report(records);
    s.tokens = static_cast<long>(records.size());
    long double sum = 0.0L, sq = 0.0L;
    for (const auto& rec : records) {
        sum += rec.latency;
        sq += rec.latency * rec.latency;
    }
    if (!records.empty()) {
        s.latency_mean = static_cast<double>(sum / records.size());
        const double var =
            static_cast<double>(sq / records.size()) - s.latency_mean * s.latency_mean;
        s.latency_sd = std::sqrt(std::max(0.0, var));
    }
    return s;
}

namespace {

struct AdamState {
    std::vector<std::vector<float>> m, v;
    long t = 0;
};

void adam_step(Model<float>& model, AdamState& state, const TrainConfig& cfg, double lr,
               bool parallel) {
    auto params = model.params();
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size, 0.0f);
            state.v[i].assign(params[i].size, 0.0f);
        }
    }
    state.t += 1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (parallel) {
            kernels::adam_update(p.data, p.grad, state.m[i].data(), state.v[i].data(), p.size,
                                 static_cast<float>(lr), static_cast<float>(cfg.adam_beta1),
                                 static_cast<float>(cfg.adam_beta2),
                                 static_cast<float>(cfg.adam_eps),
                                 static_cast<float>(cfg.weight_decay), state.t);
        } else {
            kernels::ref::adam_update(p.data, p.grad, state.m[i].data(), state.v[i].data(),
                                      p.size, static_cast<float>(lr),
                                      static_cast<float>(cfg.adam_beta1),
                                      static_cast<float>(cfg.adam_beta2),
                                      static_cast<float>(cfg.adam_eps),
                                      static_cast<float>(cfg.weight_decay), state.t);
        }
    }
}

}  // namespace

TrainOutput train(const TrainConfig& cfg, const std::vector<std::vector<TokenId>>& train_docs,
                  const std::vector<std::vector<TokenId>>& eval_docs, MetricsWriter* metrics) {
    validate_train_config(cfg);
    const VocabLayout layout = vocab_layout_for(cfg);
    const auto packed = pack_corpus(train_docs, cfg.packing.raw_len, layout);
    if (packed.empty()) {
        throw std::runtime_error("training corpus too small for one packed sequence");
    }
    const auto eval_packed = pack_corpus(eval_docs, cfg.packing.raw_len, layout);

    const SynthVocab task_vocab = SynthVocab::from(cfg.data);
    std::vector<std::vector<TokenClass>> eval_classes;
    eval_classes.reserve(eval_packed.size());
    for (const auto& seq : eval_packed) {
        eval_classes.push_back(classify_targets(seq, task_vocab, layout.separator_token()));
    }

    TrainOutput out;
    out.model = std::make_shared<Model<float>>(cfg.model, cfg.dk);
    Model<float>& model = *out.model;
    model.set_parallel(!cfg.deterministic);

    AdamState adam;
    const bool sampled = cfg.packing.recipe == Recipe::Sampled;

    std::vector<std::size_t> order(packed.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = 0;
    long epoch = 0;
    auto reshuffle = [&]() {
        SplitMix64 rng(derive_seed(cfg.seed, 0x0bd3d0 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.next_below(i)]);
        }
        cursor = 0;
    };
    reshuffle();

    EvalCollectOptions eval_opts;
    eval_opts.batch_size = cfg.batch_size;
    eval_opts.expand_seed = derive_seed(cfg.seed, 0xe7a1);
    eval_opts.classes = &eval_classes;

    auto run_eval = [&](long step) {
        const auto records = collect_eval_records(model, eval_packed, cfg.loss, cfg.packing,
                                                  layout, eval_opts);
        const EvalSummary summary = summarize_eval(records);
        if (metrics) {
            metrics->record(step, "eval", "nll", summary.perplexity.overall.nll);
            metrics->record(step, "eval", "ppl", summary.perplexity.overall.ppl);
            metrics->record(step, "eval", "nll_easy", summary.perplexity.easy.nll);
            metrics->record(step, "eval", "ppl_easy", summary.perplexity.easy.ppl);
            metrics->record(step, "eval", "nll_hard", summary.perplexity.hard.nll);
            metrics->record(step, "eval", "ppl_hard", summary.perplexity.hard.ppl);
            metrics->record(step, "eval", "latency_mean", summary.latency_mean);
            metrics->record(step, "eval", "latency_sd", summary.latency_sd);
            metrics->record(step, "eval", "clamped", summary.perplexity.clamped);
            metrics->record(step, "eval", "tokens", summary.tokens);
        }
        return std::make_pair(records, summary);
    };

    double window_loss = 0.0;
    long window_count = 0;
    std::uint64_t expand_counter = 0;
    for (long step = 0; step < cfg.total_steps; ++step) {
        std::vector<ExpandedSequence> seqs;
        const std::size_t take = std::min<std::size_t>(cfg.batch_size, packed.size());
        seqs.reserve(take);
        for (std::size_t i = 0; i < take; ++i) {
            if (cursor >= order.size()) {
                ++epoch;
                reshuffle();
            }
            const auto& raw = packed[order[cursor++]];
            seqs.push_back(expand_for_condition(raw, cfg, layout,
                                                derive_seed(cfg.seed, 0x5eed + expand_counter++)));
        }
        const ModelBatch batch = make_model_batch(seqs);
        const BatchLossStats stats = compute_batch(model, batch, seqs, cfg.loss, sampled, true);
        if (!std::isfinite(stats.loss)) {
            throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                                     " (clamped=" + std::to_string(stats.clamped) +
                                     ", kl_violations=" + std::to_string(stats.kl_violations) +
                                     ")");
        }
        out.clamped_events += stats.clamped;
        window_loss += stats.loss;
        window_count += 1;
        out.final_train_loss = stats.loss;

        // Peak rate is divided by the model width, mirroring the training
        // regime's lr scaling.
        const double lr = lr_at(step, cfg) / cfg.model.dim;
        adam_step(model, adam, cfg, lr, !cfg.deterministic);

        const bool last = step + 1 == cfg.total_steps;
        if ((step + 1) % cfg.eval_interval == 0 || last) {
            if (metrics) {
                metrics->record(step + 1, "train", "loss", window_loss / window_count);
                metrics->record(step + 1, "train", "lr", lr);
                metrics->record(step + 1, "train", "clamped", out.clamped_events);
            }
            window_loss = 0.0;
            window_count = 0;
            if (last) {
                auto [records, summary] = run_eval(step + 1);
                out.final_eval = summary;
                out.final_eval_records = std::move(records);
            } else {
                run_eval(step + 1);
            }
        }
    }
    out.steps = cfg.total_steps;
    return out;
}

}  // namespace cyb

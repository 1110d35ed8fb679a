// SPDX-License-Identifier: Apache-2.0
//
// Training loop for the desk-scale model: packing + expansion feeding the
// transformer, group-wise variant losses, adaptive optimizer with a warmup +
// cosine schedule, and periodic sliced evaluation.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cyb/analysis.hpp"
#include "cyb/io_util.hpp"
#include "cyb/losses.hpp"
#include "cyb/model.hpp"
#include "cyb/pipeline.hpp"
#include "cyb/synth.hpp"

namespace cyb {

enum class Condition { Baseline, Tbys, Cyb };

Condition condition_from_string(const std::string& s);
std::string to_string(Condition c);

struct TrainConfig {
    Condition condition = Condition::Cyb;
    LossConfig loss;
    ModelConfig model;
    PackingConfig packing;
    DKConfig dk;
    SynthTaskSpec data;
    double lr_max = 1.0;
    int warmup_steps = 100;
    int total_steps = 1000;
    int batch_size = 8;
    std::uint64_t seed = 0;
    int eval_interval = 200;
    long eval_tokens = 20000;
    bool deterministic = false;
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

// Cross-field validation (condition/pipeline consistency, variant rules).
void validate_train_config(const TrainConfig& cfg);

// Linear ramp 0 -> lr_max over warmup_steps, then cosine decay to
// lr_max * 1e-2 at total_steps. Throws when step is outside [0, total_steps].
double lr_at(long step, double lr_max, int warmup_steps, int total_steps);
double lr_at(long step, const TrainConfig& cfg);

// The loss configuration for one token group granted w steps. Under the
// sampled recipe the realized stop time is w, so the group sees a one-hot
// stop prior there; under the constant recipe groups always span w_max.
LossConfig group_loss_config(const LossConfig& base, int w, bool sampled_recipe);

struct BatchLossStats {
    double loss = 0.0;    // mean over counted (non-masked) token groups
    long groups = 0;
    long clamped = 0;
    long kl_violations = 0;
};

// Forward + group losses for one batch of expanded sequences; optionally
// accumulates parameter gradients of the mean loss. Reused by the train
// loop and the finite-difference tests.
template <typename T>
BatchLossStats compute_batch(Model<T>& model, const ModelBatch& batch,
                             const std::vector<ExpandedSequence>& seqs,
                             const LossConfig& loss_cfg, bool sampled_recipe, bool backward);

struct EvalSummary {
    PerplexityReport perplexity;
    double latency_mean = 0.0;
    double latency_sd = 0.0;
    long tokens = 0;
};

EvalSummary summarize_eval(const std::vector<TokenEvalRecord>& records);

struct TrainOutput {
    std::shared_ptr<Model<float>> model;
    EvalSummary final_eval;
    double final_train_loss = 0.0;
    long steps = 0;
    long clamped_events = 0;
    std::vector<TokenEvalRecord> final_eval_records;
};

// Runs the full loop on the given documents. metrics may be null.
TrainOutput train(const TrainConfig& cfg, const std::vector<std::vector<TokenId>>& train_docs,
                  const std::vector<std::vector<TokenId>>& eval_docs, MetricsWriter* metrics);

// Expansion for one raw sequence under a condition/recipe.
ExpandedSequence expand_for_condition(const std::vector<TokenId>& raw, const TrainConfig& cfg,
                                      const VocabLayout& vocab, std::uint64_t seed);

// The id layout implied by the model (reserved range sized by
// model.max_pause_slots so every condition shares one vocabulary).
VocabLayout vocab_layout_for(const TrainConfig& cfg);

}  // namespace cyb

// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc measurement suite: latency distributions, DK calibration
// (Spearman rank correlation with permutation tests), per-token pause
// statistics, and perplexity, all computed from per-token evaluation records.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cyb/losses.hpp"
#include "cyb/model.hpp"
#include "cyb/synth.hpp"

namespace cyb {

// Everything the analyses need about one evaluated real token.
struct TokenEvalRecord {
    int seq_index = 0;
    int raw_pos = 0;
    TokenId context = 0;
    TokenId target = 0;
    TokenClass cls = TokenClass::Other;
    std::vector<double> t;  // per-step target probability
    std::vector<double> d;  // per-step abstention (0 at the final step)
    std::vector<double> s;  // readout distribution under the run's stop prior
    double latency = 0.0;   // expected pause steps
    double nll = 0.0;       // -log E_{i~s}[t_i], gamma == 1
    double nll_argmax = 0.0;  // -log t at the most likely readout step
    bool clamped = false;
};

struct EvalCollectOptions {
    int batch_size = 8;
    std::uint64_t expand_seed = 0;  // for the sampled recipe
    // Optional difficulty class per packed sequence per raw position.
    const std::vector<std::vector<TokenClass>>* classes = nullptr;
};

template <typename T>
std::vector<TokenEvalRecord> collect_eval_records(Model<T>& model,
                                                  const std::vector<std::vector<TokenId>>& packed,
                                                  const LossConfig& loss_cfg,
                                                  const PackingConfig& packing,
                                                  const VocabLayout& vocab,
                                                  const EvalCollectOptions& opts);

// --------------------------------------------------------------------------

struct LatencyReport {
    std::vector<double> per_token;  // expected latency per evaluated token
    std::vector<double> averaged_s;  // token-averaged readout distribution
    double mean = 0.0;
    double stddev = 0.0;
};

LatencyReport latency_report(const std::vector<TokenEvalRecord>& records, int w_max);

struct SpearmanResult {
    double rho = 0.0;
    bool defined = false;  // false when either input is constant
};

// Average-rank Spearman coefficient.
SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y);

struct StepCalibration {
    int step = 0;  // 0-based pause step index
    long n = 0;
    bool defined = false;
    double rho = 0.0;
    double p_one_sided = 1.0;  // Pr(rho_perm >= rho_obs)
    double p_two_sided = 1.0;
};

struct CalibrationReport {
    std::vector<StepCalibration> steps;
};

// Rank-correlates d_i against t_{i+1} - t_i across tokens, for each step i
// that can be followed by another step. Only tokens granted the full w_max
// steps enter. p-values come from permutation resampling.
CalibrationReport calibration_report(const std::vector<TokenEvalRecord>& records, int w_max,
                                     int n_permutations = 10000, std::uint64_t seed = 0);

struct TokenPauseStats {
    TokenId token = 0;
    long count = 0;
    double median_latency = 0.0;
    double latency_variance = 0.0;
};

// Latency statistics grouped by the identity of the context token preceding
// the pause group. Tokens with fewer than min_count occurrences are dropped.
std::vector<TokenPauseStats> token_pause_table(const std::vector<TokenEvalRecord>& records,
                                               long min_count = 20);

struct PerplexitySlice {
    long n = 0;
    double nll = 0.0;
    double ppl = 0.0;
};

struct PerplexityReport {
    PerplexitySlice overall, easy, hard;
    double ppl_argmax_readout = 0.0;
    long clamped = 0;
};

PerplexityReport perplexity_report(const std::vector<TokenEvalRecord>& records);

// One JSON line per token: sequence, position, token id, expected latency.
void write_token_coloring(const std::vector<TokenEvalRecord>& records, std::ostream& os);

// Emits perplexity.json, calibration.json, latency.csv, token_pause_table.csv
// and token_coloring.jsonl under out_dir (atomically).
void write_reports(const std::vector<TokenEvalRecord>& records, int w_max,
                   const std::string& out_dir);

}  // namespace cyb

// SPDX-License-Identifier: Apache-2.0

#include "cyb/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "cyb/io_util.hpp"
#include "cyb/rng.hpp"
#include "cyb/trainer.hpp"
#include "json.hpp"

namespace cyb {

namespace {
constexpr double kFloor = 1e-300;
}

template <typename T>
std::vector<TokenEvalRecord> collect_eval_records(Model<T>& model,
                                                  const std::vector<std::vector<TokenId>>& packed,
                                                  const LossConfig& loss_cfg,
                                                  const PackingConfig& packing,
                                                  const VocabLayout& vocab,
                                                  const EvalCollectOptions& opts) {
    const bool sampled = packing.recipe == Recipe::Sampled;
    std::vector<TokenEvalRecord> records;
    std::size_t start = 0;
    std::uint64_t expand_counter = 0;
    while (start < packed.size()) {
        const std::size_t end = std::min(packed.size(), start + opts.batch_size);
        std::vector<ExpandedSequence> seqs;
        seqs.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
            if (sampled) {
                seqs.push_back(expand_sampled(packed[i], loss_cfg.omega, vocab,
                                              derive_seed(opts.expand_seed, expand_counter++)));
            } else {
                seqs.push_back(expand_constant(packed[i], packing.n_pauses, vocab));
            }
        }
        ModelBatch batch = make_model_batch(seqs);
        model.forward(batch);
        StepOutputs outs = model.collect_step_outputs(batch, seqs);

        std::vector<int> group_pos(seqs.size(), 0);  // raw position per sequence
        for (const auto& g : outs.groups) {
            const int raw_pos = group_pos[g.seq_index]++;
            if (g.target == kMaskId) continue;
            const int w = static_cast<int>(g.d.size());
            TokenEvalRecord rec;
            rec.seq_index = static_cast<int>(start) + g.seq_index;
            rec.raw_pos = raw_pos;
            rec.context = g.context;
            rec.target = g.target;
            rec.t = g.t;
            rec.d = loss_cfg.variant == LossVariant::TBYS ? tbys_abstain_profile(w).dk : g.d;
            const LossConfig group_cfg = group_loss_config(loss_cfg, w, sampled);
            rec.s = readout_distribution(AbstainProfile{rec.d}, group_cfg.omega).s;
            rec.latency = expected_latency(ReadoutDistribution{rec.s});
            double expected_t = 0.0;
            int argmax_step = 0;
            for (int j = 0; j < w; ++j) {
                expected_t += rec.s[j] * rec.t[j];
                if (rec.s[j] > rec.s[argmax_step]) argmax_step = j;
            }
            rec.clamped = expected_t < kFloor || rec.t[argmax_step] < kFloor;
            rec.nll = -std::log(std::max(expected_t, kFloor));
            rec.nll_argmax = -std::log(std::max(rec.t[argmax_step], kFloor));
            if (opts.classes) {
                const auto& cls_seq = (*opts.classes)[rec.seq_index];
                if (raw_pos + 1 < static_cast<int>(cls_seq.size())) {
                    rec.cls = cls_seq[raw_pos + 1];
                }
            }
            records.push_back(std::move(rec));
        }
        start = end;
    }
    return records;
}

template std::vector<TokenEvalRecord> collect_eval_records<float>(
    Model<float>&, const std::vector<std::vector<TokenId>>&, const LossConfig&,
    const PackingConfig&, const VocabLayout&, const EvalCollectOptions&);
template std::vector<TokenEvalRecord> collect_eval_records<double>(
    Model<double>&, const std::vector<std::vector<TokenId>>&, const LossConfig&,
    const PackingConfig&, const VocabLayout&, const EvalCollectOptions&);

LatencyReport latency_report(const std::vector<TokenEvalRecord>& records, int w_max) {
    LatencyReport report;
    report.averaged_s.assign(w_max, 0.0);
    report.per_token.reserve(records.size());
    long double sum = 0.0L, sum_sq = 0.0L;
    std::vector<long double> s_acc(w_max, 0.0L);
    for (const auto& rec : records) {
        report.per_token.push_back(rec.latency);
        sum += rec.latency;
        sum_sq += rec.latency * rec.latency;
        for (std::size_t j = 0; j < rec.s.size(); ++j) s_acc[j] += rec.s[j];
    }
    const long double n = static_cast<long double>(std::max<std::size_t>(records.size(), 1));
    for (int j = 0; j < w_max; ++j) {
        report.averaged_s[j] = static_cast<double>(s_acc[j] / n);
    }
    report.mean = static_cast<double>(sum / n);
    const double var = static_cast<double>(sum_sq / n) - report.mean * report.mean;
    report.stddev = std::sqrt(std::max(0.0, var));
    return report;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double pearson_on_ranks(const std::vector<double>& rx, const std::vector<double>& ry,
                        bool& defined) {
    const std::size_t n = rx.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = rx[i] - mx;
        const double dy = ry[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        defined = false;
        return 0.0;
    }
    defined = true;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("spearman requires equal-length inputs");
    }
    SpearmanResult out;
    if (x.size() < 2) return out;
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    out.rho = pearson_on_ranks(rx, ry, out.defined);
    return out;
}

CalibrationReport calibration_report(const std::vector<TokenEvalRecord>& records, int w_max,
                                     int n_permutations, std::uint64_t seed) {
    CalibrationReport report;
    for (int step = 0; step + 1 < w_max; ++step) {
        std::vector<double> dk;
        std::vector<double> improvement;
        for (const auto& rec : records) {
            if (static_cast<int>(rec.d.size()) != w_max) continue;
            dk.push_back(rec.d[step]);
            improvement.push_back(rec.t[step + 1] - rec.t[step]);
        }
        StepCalibration cal;
        cal.step = step;
        cal.n = static_cast<long>(dk.size());
        SpearmanResult rho = spearman(dk, improvement);
        cal.defined = rho.defined;
        cal.rho = rho.rho;
        if (rho.defined && n_permutations > 0) {
            // Ranks are permutation-invariant as multisets; only the pairing
            // changes, so each shuffle costs one dot product.
            std::vector<double> rx = average_ranks(dk);
            std::vector<double> ry = average_ranks(improvement);
            const std::size_t n = rx.size();
            double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                mx += rx[i];
                my += ry[i];
            }
            mx /= n;
            my /= n;
            for (std::size_t i = 0; i < n; ++i) {
                sxx += (rx[i] - mx) * (rx[i] - mx);
                syy += (ry[i] - my) * (ry[i] - my);
            }
            const double denom = std::sqrt(sxx * syy);
            SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(step)));
            long ge_pos = 0, ge_abs = 0;
            std::vector<double> perm = ry;
            for (int p = 0; p < n_permutations; ++p) {
                for (std::size_t i = n; i > 1; --i) {
                    std::swap(perm[i - 1], perm[rng.next_below(i)]);
                }
                double sxy = 0.0;
                for (std::size_t i = 0; i < n; ++i) sxy += (rx[i] - mx) * (perm[i] - my);
                const double r = sxy / denom;
                if (r >= cal.rho) ++ge_pos;
                if (std::abs(r) >= std::abs(cal.rho)) ++ge_abs;
            }
            cal.p_one_sided = static_cast<double>(1 + ge_pos) / (n_permutations + 1);
            cal.p_two_sided = static_cast<double>(1 + ge_abs) / (n_permutations + 1);
        }
        report.steps.push_back(cal);
    }
    return report;
}

std::vector<TokenPauseStats> token_pause_table(const std::vector<TokenEvalRecord>& records,
                                               long min_count) {
    std::map<TokenId, std::vector<double>> by_token;
    for (const auto& rec : records) {
        by_token[rec.context].push_back(rec.latency);
    }
    std::vector<TokenPauseStats> table;
    for (auto& [token, latencies] : by_token) {
        if (static_cast<long>(latencies.size()) < min_count) continue;
        TokenPauseStats stats;
        stats.token = token;
        stats.count = static_cast<long>(latencies.size());
        std::sort(latencies.begin(), latencies.end());
        const std::size_t n = latencies.size();
        stats.median_latency = (n % 2 == 1)
                                   ? latencies[n / 2]
                                   : 0.5 * (latencies[n / 2 - 1] + latencies[n / 2]);
        double mean = 0.0;
        for (double v : latencies) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : latencies) var += (v - mean) * (v - mean);
        stats.latency_variance = var / n;
        table.push_back(stats);
    }
    return table;
}

PerplexityReport perplexity_report(const std::vector<TokenEvalRecord>& records) {
    PerplexityReport report;
    long double nll_all = 0.0L, nll_easy = 0.0L, nll_hard = 0.0L, nll_argmax = 0.0L;
    for (const auto& rec : records) {
        nll_all += rec.nll;
        nll_argmax += rec.nll_argmax;
        report.overall.n += 1;
        report.clamped += rec.clamped ? 1 : 0;
        if (rec.cls == TokenClass::Easy) {
            nll_easy += rec.nll;
            report.easy.n += 1;
        } else if (rec.cls == TokenClass::Hard) {
            nll_hard += rec.nll;
            report.hard.n += 1;
        }
    }
    auto finish = [](PerplexitySlice& slice, long double total) {
        if (slice.n > 0) {
            slice.nll = static_cast<double>(total / slice.n);
            slice.ppl = std::exp(slice.nll);
        }
    };
    finish(report.overall, nll_all);
    finish(report.easy, nll_easy);
    finish(report.hard, nll_hard);
    if (report.overall.n > 0) {
        report.ppl_argmax_readout =
            std::exp(static_cast<double>(nll_argmax / report.overall.n));
    }
    return report;
}

void write_token_coloring(const std::vector<TokenEvalRecord>& records, std::ostream& os) {
    for (const auto& rec : records) {
        os << "{\"seq\": " << rec.seq_index << ", \"pos\": " << rec.raw_pos
           << ", \"token\": " << rec.context
           << ", \"expected_latency\": " << format_double(rec.latency) << "}\n";
    }
}

void write_reports(const std::vector<TokenEvalRecord>& records, int w_max,
                   const std::string& out_dir) {
    using nlohmann::json;
    ensure_directory(out_dir);

    const PerplexityReport ppl = perplexity_report(records);
    json jppl;
    jppl["overall"] = {{"n", ppl.overall.n}, {"nll", ppl.overall.nll}, {"ppl", ppl.overall.ppl}};
    jppl["easy"] = {{"n", ppl.easy.n}, {"nll", ppl.easy.nll}, {"ppl", ppl.easy.ppl}};
    jppl["hard"] = {{"n", ppl.hard.n}, {"nll", ppl.hard.nll}, {"ppl", ppl.hard.ppl}};
    jppl["ppl_argmax_readout"] = ppl.ppl_argmax_readout;
    jppl["clamped_tokens"] = ppl.clamped;
    atomic_write_file(out_dir + "/perplexity.json", jppl.dump(2) + "\n");

    const CalibrationReport cal = calibration_report(records, w_max);
    json jcal = json::array();
    for (const auto& step : cal.steps) {
        jcal.push_back({{"step", step.step},
                        {"n", step.n},
                        {"defined", step.defined},
                        {"spearman", step.rho},
                        {"p_one_sided", step.p_one_sided},
                        {"p_two_sided", step.p_two_sided}});
    }
    atomic_write_file(out_dir + "/calibration.json", jcal.dump(2) + "\n");

    const LatencyReport lat = latency_report(records, w_max);
    std::ostringstream csv;
    csv << "record,a,b,value\n";
    const int n_bins = 32;
    const double hi = std::max(1.0, static_cast<double>(w_max - 1));
    std::vector<long> bins(n_bins, 0);
    for (double v : lat.per_token) {
        int b = static_cast<int>(v / hi * n_bins);
        if (b >= n_bins) b = n_bins - 1;
        if (b < 0) b = 0;
        ++bins[b];
    }
    const double width = hi / n_bins;
    const double total = static_cast<double>(std::max<std::size_t>(lat.per_token.size(), 1));
    for (int b = 0; b < n_bins; ++b) {
        csv << "bin," << format_double(b * width) << ',' << format_double((b + 1) * width) << ','
            << format_double(bins[b] / (total * width)) << '\n';
    }
    for (int j = 0; j < w_max; ++j) {
        csv << "avg_s," << j << ",," << format_double(lat.averaged_s[j]) << '\n';
    }
    csv << "mean,,," << format_double(lat.mean) << '\n';
    csv << "sd,,," << format_double(lat.stddev) << '\n';
    atomic_write_file(out_dir + "/latency.csv", csv.str());

    std::ostringstream tbl;
    tbl << "token,count,median_latency,latency_variance\n";
    for (const auto& row : token_pause_table(records)) {
        tbl << row.token << ',' << row.count << ',' << format_double(row.median_latency) << ','
            << format_double(row.latency_variance) << '\n';
    }
    atomic_write_file(out_dir + "/token_pause_table.csv", tbl.str());

    std::ostringstream coloring;
    write_token_coloring(records, coloring);
    atomic_write_file(out_dir + "/token_coloring.jsonl", coloring.str());
}

}  // namespace cyb

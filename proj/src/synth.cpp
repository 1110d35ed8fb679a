// SPDX-License-Identifier: Apache-2.0

#include "cyb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cyb/rng.hpp"

namespace cyb {

void validate_synth_spec(const SynthTaskSpec& spec) {
    if (spec.n_filler < 2) throw std::invalid_argument("data.n_filler must be >= 2");
    if (spec.n_keys < 1) throw std::invalid_argument("data.n_keys must be >= 1");
    if (spec.n_values < 2) throw std::invalid_argument("data.n_values must be >= 2");
    if (spec.n_aliases < 1) throw std::invalid_argument("data.n_aliases must be >= 1");
    if (!(spec.hard_fraction >= 0.0 && spec.hard_fraction <= 0.25)) {
        throw std::invalid_argument("data.hard_fraction must lie in [0, 0.25]");
    }
    if (!(spec.two_hop_fraction >= 0.0 && spec.two_hop_fraction <= 1.0)) {
        throw std::invalid_argument("data.two_hop_fraction must lie in [0, 1]");
    }
    if (!(spec.filler_noise >= 0.0 && spec.filler_noise < 1.0)) {
        throw std::invalid_argument("data.filler_noise must lie in [0, 1)");
    }
    if (spec.recall_window < 4) {
        throw std::invalid_argument("data.recall_window must be >= 4");
    }
    if (spec.doc_tokens < 64) throw std::invalid_argument("data.doc_tokens must be >= 64");
    if (spec.corpus_tokens < spec.doc_tokens) {
        throw std::invalid_argument("data.corpus_tokens must cover at least one document");
    }
    // Preamble must leave room for events, and the event mix must be feasible.
    const int preamble = 2 * (spec.n_keys + spec.n_aliases);
    if (spec.hard_fraction > 0.0 && preamble > spec.doc_tokens / 2) {
        throw std::invalid_argument("data.doc_tokens too small for the binding preamble");
    }
    query_event_probability(spec);
}

SynthVocab SynthVocab::from(const SynthTaskSpec& spec) {
    SynthVocab v;
    v.n_filler = spec.n_filler;
    v.n_keys = spec.n_keys;
    v.n_values = spec.n_values;
    v.n_aliases = spec.n_aliases;
    return v;
}

double query_event_probability(const SynthTaskSpec& spec) {
    if (spec.hard_fraction == 0.0) return 0.0;
    const int preamble = 2 * (spec.n_keys + spec.n_aliases);
    const double event_tokens = static_cast<double>(spec.doc_tokens - preamble);
    // One hard token per query event; binding events are drawn at the same
    // rate as queries. Solving hard_count = f * doc for event fraction f_ev
    // over event tokens: q / (1 + 3q) = f_ev.
    const double f_ev =
        spec.hard_fraction * static_cast<double>(spec.doc_tokens) / event_tokens;
    if (f_ev >= 1.0 / 3.0) {
        throw std::invalid_argument(
            "data.hard_fraction infeasible for this doc_tokens/preamble combination");
    }
    const double q = f_ev / (1.0 - 3.0 * f_ev);
    if (2.0 * q > 0.9) {
        throw std::invalid_argument("data.hard_fraction leaves too little filler");
    }
    return q;
}

std::vector<std::vector<TokenId>> generate_synth_corpus(const SynthTaskSpec& spec) {
    validate_synth_spec(spec);
    const SynthVocab vocab = SynthVocab::from(spec);
    const double q = query_event_probability(spec);
    const double b = q;  // binding events at the query rate keeps bindings fresh
    SplitMix64 rng(spec.seed);

    const long n_docs = std::max(1L, spec.corpus_tokens / spec.doc_tokens);
    std::vector<std::vector<TokenId>> docs;
    docs.reserve(n_docs);

    for (long di = 0; di < n_docs; ++di) {
        std::vector<TokenId> doc;
        doc.reserve(spec.doc_tokens);
        std::vector<int> kv(spec.n_keys);
        std::vector<int> ak(spec.n_aliases);
        // Where each key/value binding was stated last, so queries can target
        // bindings that are still inside the attention window after packing.
        std::vector<long> kv_pos(spec.n_keys, -1);
        std::vector<long> ak_pos(spec.n_aliases, -1);
        int chain = static_cast<int>(rng.next_below(spec.n_filler));

        auto emit_filler = [&]() {
            if (rng.next_unit() < spec.filler_noise) {
                chain = static_cast<int>(rng.next_below(spec.n_filler));
            } else {
                chain = (chain + 1) % spec.n_filler;
            }
            doc.push_back(vocab.filler(chain));
        };
        auto bind_key = [&](int k) {
            kv[k] = static_cast<int>(rng.next_below(spec.n_values));
            kv_pos[k] = static_cast<long>(doc.size());
            doc.push_back(vocab.key(k));
            doc.push_back(vocab.value(kv[k]));
        };
        auto bind_alias = [&](int a) {
            ak[a] = static_cast<int>(rng.next_below(spec.n_keys));
            ak_pos[a] = static_cast<long>(doc.size());
            doc.push_back(vocab.alias(a));
            doc.push_back(vocab.key(ak[a]));
        };
        // Uniform choice among indices whose binding lies within the recall
        // window; falls back to the most recent binding.
        auto pick_recent = [&](const std::vector<long>& pos) {
            const long now = static_cast<long>(doc.size());
            std::vector<int> eligible;
            int freshest = 0;
            for (std::size_t i = 0; i < pos.size(); ++i) {
                if (pos[i] >= 0 && now - pos[i] <= spec.recall_window) {
                    eligible.push_back(static_cast<int>(i));
                }
                if (pos[i] > pos[freshest]) freshest = static_cast<int>(i);
            }
            if (eligible.empty()) return freshest;
            return eligible[rng.next_below(eligible.size())];
        };

        if (q > 0.0) {
            // Preamble: bind every key and alias once, in shuffled order, so
            // queries are answerable from the first event onward.
            std::vector<std::pair<int, int>> preamble;
            for (int k = 0; k < spec.n_keys; ++k) preamble.emplace_back(0, k);
            for (int a = 0; a < spec.n_aliases; ++a) preamble.emplace_back(1, a);
            for (std::size_t i = preamble.size(); i > 1; --i) {
                std::swap(preamble[i - 1], preamble[rng.next_below(i)]);
            }
            for (auto [kind, idx] : preamble) {
                if (kind == 0) {
                    bind_key(idx);
                } else {
                    bind_alias(idx);
                }
            }
        }

        while (static_cast<int>(doc.size()) < spec.doc_tokens) {
            const int room = spec.doc_tokens - static_cast<int>(doc.size());
            const double u = rng.next_unit();
            if (u < q && room >= 3) {
                if (rng.next_unit() < spec.two_hop_fraction) {
                    // Prefer aliases whose own binding and whose key's value
                    // binding are both still close.
                    const long now = static_cast<long>(doc.size());
                    std::vector<int> eligible;
                    for (int a = 0; a < spec.n_aliases; ++a) {
                        if (ak_pos[a] >= 0 && now - ak_pos[a] <= spec.recall_window &&
                            kv_pos[ak[a]] >= 0 &&
                            now - kv_pos[ak[a]] <= 2 * spec.recall_window) {
                            eligible.push_back(a);
                        }
                    }
                    const int a = eligible.empty()
                                      ? pick_recent(ak_pos)
                                      : eligible[rng.next_below(eligible.size())];
                    doc.push_back(vocab.query_two());
                    doc.push_back(vocab.alias(a));
                    doc.push_back(vocab.value(kv[ak[a]]));
                } else {
                    const int k = pick_recent(kv_pos);
                    doc.push_back(vocab.query_one());
                    doc.push_back(vocab.key(k));
                    doc.push_back(vocab.value(kv[k]));
                }
            } else if (u < q + b && room >= 2) {
                if (rng.next_unit() < 0.5) {
                    bind_key(static_cast<int>(rng.next_below(spec.n_keys)));
                } else {
                    bind_alias(static_cast<int>(rng.next_below(spec.n_aliases)));
                }
            } else {
                emit_filler();
            }
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<TokenClass> classify_targets(const std::vector<TokenId>& tokens,
                                         const SynthVocab& vocab, TokenId separator) {
    std::vector<TokenClass> out(tokens.size(), TokenClass::Other);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const TokenId prev = tokens[i - 1];
        if (i >= 2) {
            const TokenId two_back = tokens[i - 2];
            if ((two_back == vocab.query_one() && vocab.is_key(prev)) ||
                (two_back == vocab.query_two() && vocab.is_alias(prev))) {
                out[i] = TokenClass::Hard;
                continue;
            }
        }
        if (vocab.is_filler(prev) && tokens[i] != separator) {
            out[i] = TokenClass::Easy;
        }
    }
    return out;
}

double filler_chain_entropy(const SynthTaskSpec& spec) {
    const double n = static_cast<double>(spec.n_filler);
    const double beta = spec.filler_noise;
    const double p_next = (1.0 - beta) + beta / n;
    const double p_other = beta / n;
    double h = -p_next * std::log(p_next);
    if (p_other > 0.0) {
        h -= (n - 1.0) * p_other * std::log(p_other);
    }
    return h;
}

}  // namespace cyb

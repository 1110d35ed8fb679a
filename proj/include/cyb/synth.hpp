// SPDX-License-Identifier: Apache-2.0
//
// Synthetic key-value recall corpus with controllable per-token difficulty.
//
// Documents mix three streams:
//   - filler tokens forming a near-deterministic bigram chain (easy),
//   - binding statements "key value" / "alias key" that rebind uniformly at
//     random (unpredictable, excluded from both difficulty slices),
//   - query triples "Q1 key value" and "Q2 alias value" whose final token is
//     the recall answer (hard): Q1 needs the key's current binding, Q2 first
//     resolves the alias to a key and then that key's binding.
//
// Hard-token positions are identifiable from the token stream alone, so
// evaluation slicing needs no side channel.

#pragma once

#include <cstdint>
#include <vector>

#include "cyb/pipeline.hpp"

namespace cyb {

struct SynthTaskSpec {
    int n_filler = 20;
    int n_keys = 12;
    int n_values = 16;
    int n_aliases = 8;
    double hard_fraction = 0.1;     // target fraction of answer tokens in the corpus
    double two_hop_fraction = 0.5;  // share of queries routed through an alias
    double filler_noise = 0.05;     // chain-break probability
    int recall_window = 24;         // queries target bindings at most this many tokens back
    long corpus_tokens = 100000;    // rounded down to whole documents
    int doc_tokens = 1024;
    std::uint64_t seed = 0;
};

void validate_synth_spec(const SynthTaskSpec& spec);

// Content-id layout of the task vocabulary (all below the reserved range).
struct SynthVocab {
    int n_filler = 0, n_keys = 0, n_values = 0, n_aliases = 0;

    static SynthVocab from(const SynthTaskSpec& spec);

    int filler(int i) const { return i; }
    int key(int i) const { return n_filler + i; }
    int value(int i) const { return n_filler + n_keys + i; }
    int alias(int i) const { return n_filler + n_keys + n_values + i; }
    int query_one() const { return n_filler + n_keys + n_values + n_aliases; }
    int query_two() const { return query_one() + 1; }
    int content_size() const { return query_two() + 1; }

    bool is_filler(TokenId id) const { return id >= 0 && id < n_filler; }
    bool is_key(TokenId id) const { return id >= key(0) && id < key(n_keys); }
    bool is_alias(TokenId id) const { return id >= alias(0) && id < alias(n_aliases); }
};

std::vector<std::vector<TokenId>> generate_synth_corpus(const SynthTaskSpec& spec);

enum class TokenClass { Easy, Hard, Other };

// out[i] classifies the problem of predicting tokens[i] from its prefix:
// Hard  — answer slot of a query triple,
// Easy  — continuation after a filler token (excluding document separators),
// Other — everything else (bindings, query/key slots, separators, starts).
std::vector<TokenClass> classify_targets(const std::vector<TokenId>& tokens,
                                         const SynthVocab& vocab, TokenId separator);

// Entropy in nats of one filler-chain transition; the floor for easy-slice
// loss on an all-easy corpus.
double filler_chain_entropy(const SynthTaskSpec& spec);

// The per-event query probability the generator uses to hit hard_fraction.
double query_event_probability(const SynthTaskSpec& spec);

}  // namespace cyb

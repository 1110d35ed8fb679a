// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "cyb/synth.hpp"
#include "doctest.h"

using namespace cyb;

namespace {

SynthTaskSpec small_spec() {
    SynthTaskSpec spec;
    spec.n_filler = 12;
    spec.n_keys = 6;
    spec.n_values = 8;
    spec.n_aliases = 4;
    spec.hard_fraction = 0.1;
    spec.two_hop_fraction = 0.5;
    spec.corpus_tokens = 20000;
    spec.doc_tokens = 512;
    spec.seed = 3;
    return spec;
}

}  // namespace

TEST_CASE("spec validation") {
    CHECK_NOTHROW(validate_synth_spec(small_spec()));
    auto bad = small_spec();
    bad.hard_fraction = 0.4;
    CHECK_THROWS_AS(validate_synth_spec(bad), std::invalid_argument);
    bad = small_spec();
    bad.doc_tokens = 10;
    CHECK_THROWS_AS(validate_synth_spec(bad), std::invalid_argument);
    bad = small_spec();
    bad.n_filler = 1;
    CHECK_THROWS_AS(validate_synth_spec(bad), std::invalid_argument);
}

TEST_CASE("deterministic generation") {
    const auto a = generate_synth_corpus(small_spec());
    const auto b = generate_synth_corpus(small_spec());
    CHECK(a == b);
    auto other = small_spec();
    other.seed = 4;
    CHECK(generate_synth_corpus(other) != a);
}

TEST_CASE("documents have the configured length and id range") {
    const auto spec = small_spec();
    const auto vocab = SynthVocab::from(spec);
    const auto docs = generate_synth_corpus(spec);
    CHECK(docs.size() == static_cast<std::size_t>(spec.corpus_tokens / spec.doc_tokens));
    for (const auto& doc : docs) {
        CHECK(static_cast<int>(doc.size()) == spec.doc_tokens);
        for (TokenId id : doc) {
            CHECK(id >= 0);
            CHECK(id < vocab.content_size());
        }
    }
}

TEST_CASE("every query is answerable from earlier context") {
    const auto spec = small_spec();
    const auto vocab = SynthVocab::from(spec);
    const auto docs = generate_synth_corpus(spec);
    long queries = 0;
    for (const auto& doc : docs) {
        std::map<TokenId, TokenId> kv;  // key token -> value token
        std::map<TokenId, TokenId> ak;  // alias token -> key token
        for (std::size_t i = 0; i < doc.size(); ++i) {
            if (i >= 2 && doc[i - 2] == vocab.query_one()) {
                REQUIRE(vocab.is_key(doc[i - 1]));
                REQUIRE(kv.count(doc[i - 1]) == 1);
                CHECK(doc[i] == kv[doc[i - 1]]);
                ++queries;
                continue;  // answer token, not a binding
            }
            if (i >= 2 && doc[i - 2] == vocab.query_two()) {
                REQUIRE(vocab.is_alias(doc[i - 1]));
                REQUIRE(ak.count(doc[i - 1]) == 1);
                CHECK(doc[i] == kv[ak[doc[i - 1]]]);
                ++queries;
                continue;
            }
            // Binding statements rebind on sight, but not when the pair is a
            // query prefix (query, key/alias).
            if (i + 1 < doc.size() && vocab.is_key(doc[i]) &&
                (i == 0 || (doc[i - 1] != vocab.query_one() && doc[i - 1] != vocab.query_two()))) {
                if (doc[i + 1] >= vocab.value(0) && doc[i + 1] < vocab.value(spec.n_values)) {
                    kv[doc[i]] = doc[i + 1];
                }
            }
            if (i + 1 < doc.size() && vocab.is_alias(doc[i]) &&
                (i == 0 || doc[i - 1] != vocab.query_two())) {
                if (vocab.is_key(doc[i + 1])) ak[doc[i]] = doc[i + 1];
            }
        }
    }
    CHECK(queries > 100);
}

TEST_CASE("hard fraction hits the requested rate (3 sigma at 1e6 tokens)") {
    SynthTaskSpec spec = small_spec();
    spec.corpus_tokens = 1000000;
    spec.doc_tokens = 1000;
    spec.hard_fraction = 0.1;
    const auto vocab = SynthVocab::from(spec);
    const auto docs = generate_synth_corpus(spec);
    long hard = 0, total = 0;
    for (const auto& doc : docs) {
        const auto classes = classify_targets(doc, vocab, -7);
        for (auto cls : classes) hard += cls == TokenClass::Hard ? 1 : 0;
        total += static_cast<long>(doc.size());
    }
    const double fraction = static_cast<double>(hard) / total;
    const double sigma = std::sqrt(0.1 * 0.9 / static_cast<double>(total));
    CHECK(std::abs(fraction - 0.1) < 3 * sigma);
}

TEST_CASE("target classification") {
    const auto spec = small_spec();
    const auto vocab = SynthVocab::from(spec);
    const TokenId sep = 999;
    // filler chain, then a query triple, then filler again.
    const std::vector<TokenId> tokens{
        vocab.filler(0), vocab.filler(1), vocab.filler(2),
        vocab.query_one(), vocab.key(2), vocab.value(5),
        vocab.filler(3), sep, vocab.filler(4)};
    const auto cls = classify_targets(tokens, vocab, sep);
    CHECK(cls[0] == TokenClass::Other);  // no context
    CHECK(cls[1] == TokenClass::Easy);
    CHECK(cls[2] == TokenClass::Easy);
    CHECK(cls[3] == TokenClass::Easy);   // event start after filler stays in the easy slice
    CHECK(cls[4] == TokenClass::Other);  // key after the trigger
    CHECK(cls[5] == TokenClass::Hard);   // the recall answer
    CHECK(cls[6] == TokenClass::Other);  // resumption after a value
    CHECK(cls[7] == TokenClass::Other);  // separator target is never easy
    CHECK(cls[8] == TokenClass::Other);  // separator context
}

TEST_CASE("all-easy corpus is a pure filler chain") {
    SynthTaskSpec spec = small_spec();
    spec.hard_fraction = 0.0;
    const auto vocab = SynthVocab::from(spec);
    const auto docs = generate_synth_corpus(spec);
    long easy = 0, total = 0;
    for (const auto& doc : docs) {
        for (TokenId id : doc) CHECK(vocab.is_filler(id));
        const auto classes = classify_targets(doc, vocab, -7);
        for (std::size_t i = 1; i < classes.size(); ++i) {
            easy += classes[i] == TokenClass::Easy ? 1 : 0;
            ++total;
        }
    }
    CHECK(easy == total);

    // Chain statistics match the analytic transition entropy's parameters:
    // successor frequency close to 1 - noise + noise/n.
    long chain_next = 0, transitions = 0;
    for (const auto& doc : docs) {
        for (std::size_t i = 1; i < doc.size(); ++i) {
            chain_next += doc[i] == (doc[i - 1] + 1) % spec.n_filler ? 1 : 0;
            ++transitions;
        }
    }
    const double p_next = (1.0 - spec.filler_noise) + spec.filler_noise / spec.n_filler;
    const double freq = static_cast<double>(chain_next) / transitions;
    const double sigma = std::sqrt(p_next * (1 - p_next) / transitions);
    CHECK(std::abs(freq - p_next) < 4 * sigma);
}

TEST_CASE("filler chain entropy formula") {
    SynthTaskSpec spec = small_spec();
    spec.filler_noise = 0.0;
    CHECK(filler_chain_entropy(spec) == doctest::Approx(0.0));
    spec.filler_noise = 0.05;
    spec.n_filler = 12;
    const double p1 = 0.95 + 0.05 / 12;
    const double p2 = 0.05 / 12;
    const double expect = -(p1 * std::log(p1) + 11 * p2 * std::log(p2));
    CHECK(filler_chain_entropy(spec) == doctest::Approx(expect).epsilon(1e-12));
}

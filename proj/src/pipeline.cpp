// SPDX-License-Identifier: Apache-2.0

#include "cyb/pipeline.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "cyb/rng.hpp"

namespace cyb {

VocabLayout VocabLayout::make(int vocab_size, int n_pauses) {
    if (n_pauses < 0) {
        throw std::invalid_argument("n_pauses must be >= 0");
    }
    if (vocab_size < n_pauses + 3) {
        throw std::invalid_argument(
            "vocab_size too small for reserved ids (needs content + separator + pauses + dk)");
    }
    VocabLayout layout;
    layout.vocab_size = vocab_size;
    layout.n_pauses = n_pauses;
    return layout;
}

TokenId VocabLayout::pause_token(int slot) const {
    if (slot < 1 || slot > n_pauses) {
        throw std::invalid_argument("pause slot out of range: vocabulary lacks this pause id");
    }
    return vocab_size - 1 - n_pauses + (slot - 1);
}

Recipe recipe_from_string(const std::string& s) {
    if (s == "constant") return Recipe::Constant;
    if (s == "sampled") return Recipe::Sampled;
    throw std::invalid_argument("unknown recipe: " + s);
}

std::string to_string(Recipe r) {
    return r == Recipe::Constant ? "constant" : "sampled";
}

int ExpandedSequence::real_token_count() const {
    int count = 0;
    for (int slot : pause_slot) {
        if (slot == 0) ++count;
    }
    return count;
}

std::vector<std::vector<TokenId>> pack_corpus(const std::vector<std::vector<TokenId>>& documents,
                                              int raw_len, const VocabLayout& vocab) {
    if (raw_len < 2) {
        throw std::invalid_argument("raw_len must be >= 2");
    }
    if (documents.empty()) {
        throw std::invalid_argument("empty corpus");
    }
    std::vector<TokenId> stream;
    std::size_t total = 0;
    for (const auto& doc : documents) total += doc.size() + 1;
    stream.reserve(total);
    bool first = true;
    for (const auto& doc : documents) {
        if (!first) stream.push_back(vocab.separator_token());
        first = false;
        stream.insert(stream.end(), doc.begin(), doc.end());
    }
    std::vector<std::vector<TokenId>> packed;
    const std::size_t n_chunks = stream.size() / static_cast<std::size_t>(raw_len);
    packed.reserve(n_chunks);
    for (std::size_t c = 0; c < n_chunks; ++c) {
        packed.emplace_back(stream.begin() + c * raw_len, stream.begin() + (c + 1) * raw_len);
    }
    return packed;
}

namespace {

void check_raw_ids(const std::vector<TokenId>& raw, const VocabLayout& vocab) {
    for (TokenId id : raw) {
        if (id < 0 || id > vocab.separator_token()) {
            throw std::invalid_argument(
                "raw token id collides with reserved pause/dk ids or is negative");
        }
    }
}

// Appends one token group: the real token followed by n_pauses pauses, all
// sharing the real token's position index and target.
void append_group(ExpandedSequence& out, TokenId real, int position, TokenId target,
                  int n_pauses, const VocabLayout& vocab) {
    out.ids.push_back(real);
    out.positions.push_back(position);
    out.pause_slot.push_back(0);
    out.target.push_back(target);
    out.step_of_slot.push_back(1);
    for (int p = 1; p <= n_pauses; ++p) {
        out.ids.push_back(vocab.pause_token(p));
        out.positions.push_back(position);
        out.pause_slot.push_back(p);
        out.target.push_back(target);
        out.step_of_slot.push_back(p + 1);
    }
}

}  // namespace

ExpandedSequence expand_constant(const std::vector<TokenId>& raw, int n_pauses,
                                 const VocabLayout& vocab) {
    if (n_pauses > vocab.n_pauses) {
        throw std::invalid_argument("vocabulary lacks reserved pause ids for this pause count");
    }
    check_raw_ids(raw, vocab);
    ExpandedSequence out;
    const std::size_t slots = raw.size() * (1 + static_cast<std::size_t>(n_pauses));
    out.ids.reserve(slots);
    out.positions.reserve(slots);
    out.pause_slot.reserve(slots);
    out.target.reserve(slots);
    out.step_of_slot.reserve(slots);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const TokenId target = i + 1 < raw.size() ? raw[i + 1] : kMaskId;
        append_group(out, raw[i], static_cast<int>(i), target, n_pauses, vocab);
    }
    return out;
}

ExpandedSequence expand_sampled(const std::vector<TokenId>& raw, const StopPrior& prior,
                                const VocabLayout& vocab, std::uint64_t seed) {
    if (prior.w_max() - 1 > vocab.n_pauses) {
        throw std::invalid_argument("vocabulary lacks reserved pause ids for this pause count");
    }
    check_raw_ids(raw, vocab);
    SplitMix64 rng(seed);
    ExpandedSequence out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const TokenId target = i + 1 < raw.size() ? raw[i + 1] : kMaskId;
        const int granted = rng.next_categorical(prior.omega) + 1;  // W ~ Cat(omega)
        append_group(out, raw[i], static_cast<int>(i), target, granted - 1, vocab);
    }
    return out;
}

std::vector<TokenId> strip_pauses(const ExpandedSequence& expanded) {
    std::vector<TokenId> raw;
    raw.reserve(expanded.ids.size());
    int expected_pause = 0;  // next pause_slot value if the group continues
    for (int i = 0; i < expanded.size(); ++i) {
        const int slot = expanded.pause_slot[i];
        if (slot == 0) {
            raw.push_back(expanded.ids[i]);
            expected_pause = 1;
        } else {
            if (slot != expected_pause) {
                throw std::invalid_argument("malformed pause_slot ordering in expanded sequence");
            }
            ++expected_pause;
        }
    }
    return raw;
}

void dump_expanded(const ExpandedSequence& expanded, std::ostream& os) {
    for (int i = 0; i < expanded.size(); ++i) {
        os << expanded.ids[i] << ' ' << expanded.positions[i] << ' ' << expanded.pause_slot[i]
           << ' ' << expanded.target[i] << '\n';
    }
}

std::vector<std::vector<TokenId>> read_corpus_text(std::istream& is) {
    std::vector<std::vector<TokenId>> docs;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<TokenId> doc;
        long long id = 0;
        while (ls >> id) doc.push_back(static_cast<TokenId>(id));
        if (!doc.empty()) docs.push_back(std::move(doc));
    }
    return docs;
}

void write_corpus_text(const std::vector<std::vector<TokenId>>& docs, std::ostream& os) {
    for (const auto& doc : docs) {
        for (std::size_t i = 0; i < doc.size(); ++i) {
            if (i > 0) os << ' ';
            os << doc[i];
        }
        os << '\n';
    }
}

namespace {

void write_le32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

bool read_le32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

}  // namespace

std::vector<std::vector<TokenId>> read_corpus_binary(std::istream& is) {
    std::vector<std::vector<TokenId>> docs;
    std::uint32_t len = 0;
    while (read_le32(is, len)) {
        std::vector<TokenId> doc(len);
        for (std::uint32_t i = 0; i < len; ++i) {
            std::uint32_t raw = 0;
            if (!read_le32(is, raw)) {
                throw std::runtime_error("truncated binary corpus record");
            }
            doc[i] = static_cast<TokenId>(raw);
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

void write_corpus_binary(const std::vector<std::vector<TokenId>>& docs, std::ostream& os) {
    for (const auto& doc : docs) {
        write_le32(os, static_cast<std::uint32_t>(doc.size()));
        for (TokenId id : doc) write_le32(os, static_cast<std::uint32_t>(id));
    }
}

std::vector<std::vector<TokenId>> load_corpus_file(const std::string& path) {
    const bool binary = path.size() > 4 && path.substr(path.size() - 4) == ".bin";
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f) {
        throw std::runtime_error("cannot open corpus file: " + path);
    }
    return binary ? read_corpus_binary(f) : read_corpus_text(f);
}

}  // namespace cyb

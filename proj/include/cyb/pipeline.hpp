// SPDX-License-Identifier: Apache-2.0
//
// Token stream transforms: corpus packing, pause insertion (constant and
// sampled recipes), and the reserved-id layout shared by the pipeline and
// the model head.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cyb/stop_process.hpp"

namespace cyb {

using TokenId = std::int32_t;

// Sentinel target for slots with no next real token. Never embedded.
constexpr TokenId kMaskId = -1;

// Reserved ids live at the top of the id space:
//   [0, content_end)        content tokens
//   content_end             document separator
//   content_end+1 .. top-2  pause tokens <pause1>.. (one id per pause slot)
//   top-1                   the don't-know output token
struct VocabLayout {
    int vocab_size = 0;
    int n_pauses = 0;

    static VocabLayout make(int vocab_size, int n_pauses);

    TokenId dk_token() const { return vocab_size - 1; }
    TokenId pause_token(int slot) const;  // slot in 1..n_pauses
    TokenId separator_token() const { return vocab_size - 2 - n_pauses; }
    int content_size() const { return vocab_size - 2 - n_pauses; }
    bool is_pause(TokenId id) const {
        return n_pauses > 0 && id >= vocab_size - 1 - n_pauses && id < vocab_size - 1;
    }
    int pause_slot_of(TokenId id) const { return id - (vocab_size - 2 - n_pauses); }
};

enum class Recipe { Constant, Sampled };

Recipe recipe_from_string(const std::string& s);
std::string to_string(Recipe r);

struct PackingConfig {
    int raw_len = 0;       // real tokens per packed sequence
    int n_pauses = 0;      // pauses per real token under the constant recipe
    Recipe recipe = Recipe::Constant;
};

// One pause-expanded sequence. A "token group" is a real-token slot plus the
// pauses that follow it; every slot in a group shares the group's target.
struct ExpandedSequence {
    std::vector<TokenId> ids;
    std::vector<int> positions;      // pauses repeat the preceding real token's index
    std::vector<int> pause_slot;     // 0 for real tokens, 1.. for pauses
    std::vector<TokenId> target;     // next real token, or kMaskId at the end
    std::vector<int> step_of_slot;   // 1-based step within the slot's group

    int size() const { return static_cast<int>(ids.size()); }
    int real_token_count() const;
};

// Concatenates documents with a separator token between them, then splits
// into consecutive raw_len chunks; the trailing partial chunk is dropped.
std::vector<std::vector<TokenId>> pack_corpus(const std::vector<std::vector<TokenId>>& documents,
                                              int raw_len, const VocabLayout& vocab);

// Inserts <pause1>..<pauseN> after every real token.
ExpandedSequence expand_constant(const std::vector<TokenId>& raw, int n_pauses,
                                 const VocabLayout& vocab);

// Per real token draws W ~ Cat(omega) and inserts W-1 pauses. The group's
// step count is recoverable from step_of_slot, so the loss can pin the
// abstain probability to zero at each group's final granted step.
ExpandedSequence expand_sampled(const std::vector<TokenId>& raw, const StopPrior& prior,
                                const VocabLayout& vocab, std::uint64_t seed);

// Inverse of expansion: keeps the real-token slots.
std::vector<TokenId> strip_pauses(const ExpandedSequence& expanded);

// One slot per line: id, position, pause_slot, target.
void dump_expanded(const ExpandedSequence& expanded, std::ostream& os);

// Newline-delimited records of whitespace-separated token ids.
std::vector<std::vector<TokenId>> read_corpus_text(std::istream& is);
void write_corpus_text(const std::vector<std::vector<TokenId>>& docs, std::ostream& os);

// Binary corpus: per record a little-endian u32 length followed by that many
// little-endian 32-bit ids.
std::vector<std::vector<TokenId>> read_corpus_binary(std::istream& is);
void write_corpus_binary(const std::vector<std::vector<TokenId>>& docs, std::ostream& os);

std::vector<std::vector<TokenId>> load_corpus_file(const std::string& path);

}  // namespace cyb

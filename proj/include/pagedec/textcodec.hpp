// Copyright 2026 the pagedec authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "pagedec/common.hpp"

#include <unordered_map>

namespace pagedec {

using TokenSeq = std::vector<int>;

// Character alphabet with the two control tokens. Ids are laid out as
//   0 .. n-1   characters (sorted code points)
//   n          <e>  (end of transcription, predictable)
//   n+1        <s>  (start of transcription, embedding only, never predicted)
// so the score/projection dimension is n+1 and the embedding table has n+2
// rows. Immutable after construction.
struct Vocab {
    std::vector<char32_t> chars;
    std::unordered_map<char32_t, int> id_of;
    int eos_id = 0;
    int sos_id = 0;

    /// Number of predictable tokens |A| = characters + <e>.
    int score_dim() const { return static_cast<int>(chars.size()) + 1; }
    /// Rows of the embedding table = |A| + 1 (the extra row is <s>).
    int embed_rows() const { return score_dim() + 1; }
    bool contains(char32_t c) const { return id_of.count(c) != 0; }
};

/// Builds the sorted deterministic vocabulary of all characters in the corpus.
Vocab build_vocab(const std::vector<std::string>& corpus_texts);

/// Text -> token ids over the character range. Unknown characters throw
/// MismatchError naming the character and its code-point offset.
TokenSeq encode_text(const Vocab& v, const std::string& text);

/// Token ids -> text. Drops <s>, truncates at the first <e>. Ids outside the
/// embedding-table range throw MismatchError.
std::string decode_tokens(const Vocab& v, const TokenSeq& seq);

// Teacher-forcing target layout for a window of w queries and m projection
// heads: main = y ++ <e> ++ <e> * n_e with |main| divisible by w, and the
// total sequence S = <s> * w ++ main. Every (position, head) pair has a
// target: indices past the end of S read as <e>.
struct PaddedTargets {
    TokenSeq main;
    int n_e = 0;
    int w = 1;
    int sos_id = 0;
    int eos_id = 0;

    /// S[index], extended with <e> beyond |S|.
    int target_at(size_t index) const {
        if (index < static_cast<size_t>(w)) return sos_id;
        const size_t j = index - static_cast<size_t>(w);
        return j < main.size() ? main[j] : eos_id;
    }
    /// Decoder input S[0 .. |main|-1]: w start tokens followed by all of
    /// main except its last w tokens.
    TokenSeq input_ids() const {
        TokenSeq ids(static_cast<size_t>(w), sos_id);
        ids.insert(ids.end(), main.begin(), main.end() - w);
        return ids;
    }
};

/// Pads y for window size w and head count m. y must not contain <e>.
PaddedTargets pad_targets(const Vocab& v, const TokenSeq& y, int w, int m);

}  // namespace pagedec

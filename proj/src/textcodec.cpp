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

#include "pagedec/textcodec.hpp"

#include <algorithm>
#include <set>

namespace pagedec {

Vocab build_vocab(const std::vector<std::string>& corpus_texts) {
    std::set<char32_t> seen;
    for (const auto& text : corpus_texts) {
        for (char32_t c : utf8_decode(text)) seen.insert(c);
    }
    if (seen.empty()) throw ConfigError("empty alphabet");
    Vocab v;
    v.chars.assign(seen.begin(), seen.end());
    for (size_t i = 0; i < v.chars.size(); ++i) v.id_of[v.chars[i]] = static_cast<int>(i);
    v.eos_id = static_cast<int>(v.chars.size());
    v.sos_id = v.eos_id + 1;
    return v;
}

TokenSeq encode_text(const Vocab& v, const std::string& text) {
    const auto cps = utf8_decode(text);
    TokenSeq ids;
    ids.reserve(cps.size());
    for (size_t i = 0; i < cps.size(); ++i) {
        auto it = v.id_of.find(cps[i]);
        if (it == v.id_of.end()) {
            throw MismatchError("character '" + utf8_encode_one(cps[i]) +
                                "' at offset " + std::to_string(i) + " is not in the alphabet");
        }
        ids.push_back(it->second);
    }
    return ids;
}

std::string decode_tokens(const Vocab& v, const TokenSeq& seq) {
    std::vector<char32_t> cps;
    cps.reserve(seq.size());
    for (int id : seq) {
        if (id < 0 || id >= v.embed_rows())
            throw MismatchError("token id " + std::to_string(id) + " out of range");
        if (id == v.eos_id) break;
        if (id == v.sos_id) continue;
        cps.push_back(v.chars[static_cast<size_t>(id)]);
    }
    return utf8_encode(cps);
}

PaddedTargets pad_targets(const Vocab& v, const TokenSeq& y, int w, int m) {
    if (w < 1) throw ConfigError("window size must be >= 1");
    if (m < 1) throw ConfigError("head count must be >= 1");
    for (int id : y) {
        if (id == v.eos_id) throw ConfigError("target sequence already contains <e>");
        if (id < 0 || id >= v.eos_id)
            throw MismatchError("target token id " + std::to_string(id) + " out of range");
    }
    PaddedTargets p;
    p.w = w;
    p.sos_id = v.sos_id;
    p.eos_id = v.eos_id;
    const size_t base = y.size() + 1;
    p.n_e = static_cast<int>((w - (base % w)) % w);
    p.main = y;
    p.main.insert(p.main.end(), static_cast<size_t>(p.n_e) + 1, v.eos_id);
    return p;
}

}  // namespace pagedec

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

#include <doctest.h>

using namespace pagedec;

TEST_CASE("build_vocab sorts and appends the terminal token") {
    const Vocab v = build_vocab({"ab", "ba"});
    CHECK(v.chars == std::vector<char32_t>{U'a', U'b'});
    CHECK(v.score_dim() == 3);  // a, b, <e>
    CHECK(v.eos_id == 2);
    CHECK(v.sos_id == 3);
    CHECK(v.embed_rows() == 4);
}

TEST_CASE("newline is an ordinary alphabet character") {
    const Vocab v = build_vocab({"A\nB"});
    CHECK(v.contains(U'\n'));
    CHECK(v.id_of.at(U'\n') == 0);  // sorts below 'A'
}

TEST_CASE("empty strings contribute nothing") {
    const Vocab v = build_vocab({"", "x"});
    CHECK(v.chars == std::vector<char32_t>{U'x'});
    CHECK(v.score_dim() == 2);
    CHECK_THROWS_WITH_AS(build_vocab({"", ""}), "empty alphabet", ConfigError);
    CHECK_THROWS_AS(build_vocab({}), ConfigError);
}

TEST_CASE("encode and decode invert each other") {
    const Vocab v = build_vocab({"ab"});
    CHECK(encode_text(v, "ab") == TokenSeq{0, 1});
    CHECK(decode_tokens(v, {0, 1, v.eos_id, 0}) == "ab");  // truncated at <e>
    CHECK(decode_tokens(v, {v.sos_id, 1, 0}) == "ba");     // <s> dropped

    try {
        encode_text(v, "a\xce\xb6");  // zeta, not in the alphabet
        FAIL("expected MismatchError");
    } catch (const MismatchError& e) {
        CHECK(std::string(e.what()).find("offset 1") != std::string::npos);
    }
    CHECK_THROWS_AS(decode_tokens(v, {99}), MismatchError);
}

TEST_CASE("round trip over random texts") {
    const Vocab v = build_vocab({"abc \nxyz"});
    RngStream rng(7);
    for (int it = 0; it < 200; ++it) {
        std::string text;
        const size_t len = rng.next_below(40);
        for (size_t i = 0; i < len; ++i)
            text += utf8_encode_one(v.chars[rng.next_below(v.chars.size())]);
        CHECK(decode_tokens(v, encode_text(v, text)) == text);
    }
}

TEST_CASE("pad_targets divisibility") {
    const Vocab v = build_vocab({"abcdefghijklmnopqr"});

    TokenSeq y17(17, 0);
    const PaddedTargets a = pad_targets(v, y17, 3, 2);
    CHECK(a.n_e == 0);  // 17 + 1 = 18 divisible by 3
    CHECK(a.main.size() == 18);

    TokenSeq y9(9, 0);
    const PaddedTargets b = pad_targets(v, y9, 4, 1);
    CHECK(b.n_e == 2);
    CHECK(b.main.size() == 12);

    const PaddedTargets c = pad_targets(v, y9, 1, 1);
    CHECK(c.n_e == 0);

    CHECK_THROWS_AS(pad_targets(v, y9, 0, 1), ConfigError);
    CHECK_THROWS_AS(pad_targets(v, y9, 1, 0), ConfigError);
    CHECK_THROWS_AS(pad_targets(v, TokenSeq{0, v.eos_id}, 2, 1), ConfigError);
}

TEST_CASE("pad_targets properties over random inputs") {
    const Vocab v = build_vocab({"abcd"});
    RngStream rng(11);
    for (int it = 0; it < 300; ++it) {
        const int w = 1 + static_cast<int>(rng.next_below(7));
        const int m = 1 + static_cast<int>(rng.next_below(4));
        TokenSeq y;
        const size_t len = 1 + rng.next_below(30);
        for (size_t i = 0; i < len; ++i) y.push_back(static_cast<int>(rng.next_below(4)));
        const PaddedTargets p = pad_targets(v, y, w, m);
        CHECK((y.size() + 1 + static_cast<size_t>(p.n_e)) % static_cast<size_t>(w) == 0);
        // every index past the padded end reads as <e>
        const size_t total = static_cast<size_t>(w) + p.main.size();
        for (size_t i = total; i < total + 5; ++i) CHECK(p.target_at(i) == v.eos_id);
        for (int i = 0; i < w; ++i) CHECK(p.target_at(static_cast<size_t>(i)) == v.sos_id);
        // input is S without its last w tokens
        const TokenSeq input = p.input_ids();
        CHECK(input.size() == p.main.size());
        for (size_t i = 0; i < input.size(); ++i)
            CHECK(input[i] == p.target_at(i));
    }
}

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

#include "pagedec/masks.hpp"

#include <numeric>

namespace pagedec {

size_t AttentionMask::count_true() const {
    return static_cast<size_t>(std::accumulate(cells.begin(), cells.end(), size_t{0}));
}

BlockAssignment BlockAssignment::uniform(int len, int w) {
    if (len < 1 || w < 1) throw ConfigError("uniform blocks need len >= 1 and w >= 1");
    BlockAssignment b;
    b.block_of.resize(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) b.block_of[static_cast<size_t>(i)] = i / w;
    return b;
}

static AttentionMask make_empty(int len) {
    if (len < 1) throw ConfigError("mask length must be >= 1");
    AttentionMask m;
    m.size = len;
    m.cells.assign(static_cast<size_t>(len) * len, 0);
    return m;
}

AttentionMask causal_mask(int len) {
    AttentionMask m = make_empty(len);
    for (int i = 0; i < len; ++i)
        for (int j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
}

AttentionMask windowed_mask(int len, int w) {
    if (w < 1) throw ConfigError("window size must be >= 1");
    AttentionMask m = make_empty(len);
    for (int i = 0; i < len; ++i) {
        const int bi = i / w;
        for (int j = 0; j < len; ++j)
            if (j / w <= bi) m.set(i, j, true);
    }
    return m;
}

AttentionMask blocks_mask(const BlockAssignment& b) {
    const int len = b.size();
    AttentionMask m = make_empty(len);
    if (b.block_of[0] != 0) throw ConfigError("block ids must start at 0");
    for (int i = 1; i < len; ++i) {
        const int step = b.block_of[static_cast<size_t>(i)] - b.block_of[static_cast<size_t>(i - 1)];
        if (step != 0 && step != 1)
            throw ConfigError("block ids must be nondecreasing and advance by 1");
    }
    for (int i = 0; i < len; ++i)
        for (int j = 0; j < len; ++j)
            if (b.block_of[static_cast<size_t>(j)] <= b.block_of[static_cast<size_t>(i)])
                m.set(i, j, true);
    return m;
}

AttentionMask fasterdan_mask(int n_stage1, const std::vector<int>& line_of,
                             const std::vector<int>& pos_in_line) {
    if (n_stage1 < 1) throw ConfigError("stage 1 needs at least the start token");
    if (line_of.size() != pos_in_line.size())
        throw ConfigError("inconsistent line map: line and offset lists differ in length");
    const int n2 = static_cast<int>(line_of.size());
    const int len = n_stage1 + n2;
    AttentionMask m = make_empty(len);
    // stage 1: causal among itself
    for (int i = 0; i < n_stage1; ++i)
        for (int j = 0; j <= i; ++j) m.set(i, j, true);
    // stage 2
    for (int i = 0; i < n2; ++i) {
        const int row = n_stage1 + i;
        if (line_of[static_cast<size_t>(i)] < 0)
            throw ConfigError("inconsistent line map: negative line id");
        for (int j = 0; j < n_stage1; ++j) m.set(row, j, true);
        for (int j = 0; j < n2; ++j) {
            if (line_of[static_cast<size_t>(j)] == line_of[static_cast<size_t>(i)] &&
                pos_in_line[static_cast<size_t>(j)] <= pos_in_line[static_cast<size_t>(i)])
                m.set(row, n_stage1 + j, true);
        }
    }
    return m;
}

}  // namespace pagedec

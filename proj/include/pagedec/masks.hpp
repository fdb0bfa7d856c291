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

namespace pagedec {

/// Boolean self-attention mask. Row = attending position, column = attended
/// position; allowed(i, i) is always true.
struct AttentionMask {
    int size = 0;
    std::vector<uint8_t> cells;  // row-major size x size

    bool allowed(int i, int j) const { return cells[static_cast<size_t>(i) * size + j] != 0; }
    void set(int i, int j, bool v) { cells[static_cast<size_t>(i) * size + j] = v ? 1 : 0; }
    size_t count_true() const;
    bool operator==(const AttentionMask& o) const { return size == o.size && cells == o.cells; }
};

/// Maps each position to a block id. Ids start at 0 and are nondecreasing,
/// advancing by exactly 1 between consecutive blocks.
struct BlockAssignment {
    std::vector<int> block_of;

    /// Uniform blocks of size w over length len.
    static BlockAssignment uniform(int len, int w);
    void push_block(int count) {
        const int id = block_of.empty() ? 0 : block_of.back() + 1;
        block_of.insert(block_of.end(), static_cast<size_t>(count), id);
    }
    int size() const { return static_cast<int>(block_of.size()); }
};

/// allowed(i, j) <=> j <= i.
AttentionMask causal_mask(int len);

/// allowed(i, j) <=> floor(j/w) <= floor(i/w). Equals causal_mask for w = 1.
AttentionMask windowed_mask(int len, int w);

/// allowed(i, j) <=> block(j) <= block(i). Throws on invalid assignments.
AttentionMask blocks_mask(const BlockAssignment& b);

// Two-stage mask: the first n_stage1 positions attend causally among
// themselves; each later position (line_of[p], pos_in_line[p]) attends to all
// stage-1 positions and to same-line positions with offset <= its own.
AttentionMask fasterdan_mask(int n_stage1, const std::vector<int>& line_of,
                             const std::vector<int>& pos_in_line);

}  // namespace pagedec

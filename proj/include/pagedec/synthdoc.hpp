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

#include <optional>

namespace pagedec {

struct LineBox {
    std::string text;
    int x = 0, y = 0, w = 0, h = 0;
};

/// One rendered page with its ground truth. `text` is the newline join of
/// `lines` in reading order (per column top to bottom, left column first).
struct DocumentSample {
    GrayImage image;
    std::string text;
    std::vector<LineBox> lines;
};

struct SynthConfig {
    std::string corpus;           // whitespace-separated word source
    int glyph_height = 16;        // >= 7; lines advance by 2 * glyph_height
    int min_lines = 1;
    int max_lines = 6;
    int max_chars_per_line = 20;
    int columns = 1;              // 1 or 2
    int margin = 8;               // page margins, px
    int noise = 8;                // uniform pixel noise amplitude
    uint64_t seed = 1;
    std::optional<std::string> fixed_text;  // overrides generation when set

    void validate() const;
};

struct SplitCounts {
    int train = 0;
    int val = 0;
    int test = 0;
};

/// Renders one page. Pure in (cfg, sample_seed): identical calls produce
/// byte-identical images.
DocumentSample render_document(const SynthConfig& cfg, uint64_t sample_seed);

/// Writes PGM files plus manifest.json into out_dir, one entry per sample,
/// with disjoint seed ranges per split.
void make_dataset(const SynthConfig& cfg, const SplitCounts& counts, const std::string& out_dir);

struct ManifestEntry {
    std::string file;
    std::string split;
    std::string text;
    std::vector<LineBox> lines;
};

struct Manifest {
    std::vector<ManifestEntry> samples;
    SynthConfig config;
};

Manifest load_manifest(const std::string& dataset_dir);

void write_pgm(const std::string& path, const GrayImage& img);
GrayImage read_pgm(const std::string& path);

}  // namespace pagedec

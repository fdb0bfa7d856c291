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

#include <span>

namespace pagedec {

/// Minimal unit-cost edit distance (insert, delete, substitute) between two
/// token sequences, two-row dynamic programming.
template <typename Tok>
size_t levenshtein(std::span<const Tok> a, std::span<const Tok> b) {
    if (a.empty()) return b.size();
    if (b.empty()) return a.size();
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// Character error rate: code-point edit distance / |gt|. gt must be nonempty.
double cer(const std::string& gt, const std::string& pred);

/// Word error rate over whitespace-delimited tokens (newline counts as
/// whitespace, punctuation stays attached). gt must contain at least one word.
double wer(const std::string& gt, const std::string& pred);

std::vector<std::string> split_words(const std::string& text);

struct SampleEval {
    std::string id;
    double cer = 0.0;
    double wer = 0.0;
    long iterations = 0;
    long emitted_len = 0;
    double wall_time = 0.0;
};

struct EvalReport {
    std::vector<SampleEval> per_sample;
    double mean_cer_pct = 0.0;
    double mean_wer_pct = 0.0;
    double mean_time_s = 0.0;
    double mean_iterations = 0.0;
    long total_samples = 0;

    void finalize();  // recomputes the aggregate from per_sample
    std::string to_json() const;
    std::string to_csv() const;
};

}  // namespace pagedec

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

#include "pagedec/metrics.hpp"

#include <json.hpp>

#include <sstream>

namespace pagedec {

static bool is_space_cp(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\v' || c == U'\f' || c == U'\r' ||
           c == U' ' || c == U' ' || c == U' ';
}

double cer(const std::string& gt, const std::string& pred) {
    const auto a = utf8_decode(gt);
    if (a.empty()) throw ConfigError("undefined normalization: empty ground truth");
    const auto b = utf8_decode(pred);
    return static_cast<double>(levenshtein<char32_t>(a, b)) / static_cast<double>(a.size());
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::vector<char32_t> cur;
    for (char32_t c : utf8_decode(text)) {
        if (is_space_cp(c)) {
            if (!cur.empty()) {
                words.push_back(utf8_encode(cur));
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(utf8_encode(cur));
    return words;
}

double wer(const std::string& gt, const std::string& pred) {
    const auto a = split_words(gt);
    if (a.empty()) throw ConfigError("undefined normalization: ground truth has no words");
    const auto b = split_words(pred);
    return static_cast<double>(levenshtein<std::string>(a, b)) / static_cast<double>(a.size());
}

void EvalReport::finalize() {
    total_samples = static_cast<long>(per_sample.size());
    double c = 0.0, w = 0.0, t = 0.0, it = 0.0;
    for (const auto& row : per_sample) {
        c += row.cer;
        w += row.wer;
        t += row.wall_time;
        it += static_cast<double>(row.iterations);
    }
    const double n = total_samples > 0 ? static_cast<double>(total_samples) : 1.0;
    mean_cer_pct = 100.0 * c / n;
    mean_wer_pct = 100.0 * w / n;
    mean_time_s = t / n;
    mean_iterations = it / n;
}

std::string EvalReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : per_sample)
        rows.push_back({{"id", r.id},
                        {"cer", r.cer},
                        {"wer", r.wer},
                        {"iterations", r.iterations},
                        {"emitted_len", r.emitted_len},
                        {"wall_time", r.wall_time}});
    const nlohmann::json j{
        {"averaging", "macro (per-sample mean)"},
        {"wer_tokenization", "split on Unicode whitespace including newline; punctuation attached"},
        {"per_sample", rows},
        {"aggregate",
         {{"mean_cer_pct", mean_cer_pct},
          {"mean_wer_pct", mean_wer_pct},
          {"mean_time_s", mean_time_s},
          {"mean_iterations", mean_iterations},
          {"total_samples", total_samples}}}};
    return j.dump(2);
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "id,cer,wer,iterations,emitted_len,wall_time\n";
    for (const auto& r : per_sample)
        out << r.id << "," << r.cer << "," << r.wer << "," << r.iterations << ","
            << r.emitted_len << "," << r.wall_time << "\n";
    return out.str();
}

}  // namespace pagedec

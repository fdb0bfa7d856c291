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

#include "pagedec/decode.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>

namespace pagedec {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int argmax_row(const Mat<float>& m, Eigen::Index row) {
    Eigen::Index j = 0;
    m.row(row).maxCoeff(&j);
    return static_cast<int>(j);
}

/// Max softmax probability of one logit row.
double confidence_row(const Mat<float>& m, Eigen::Index row) {
    const float mx = m.row(row).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        sum += std::exp(static_cast<double>(m(row, j) - mx));
    return 1.0 / sum;
}

void validate_policy(const PredictionPolicy& policy, int m_used) {
    if (policy.kind == PredictionPolicy::Kind::Static) {
        if (policy.k < 1 || policy.k > m_used)
            throw ConfigError("static policy keeps " + std::to_string(policy.k) +
                              " heads, valid range is [1, " + std::to_string(m_used) + "]");
    } else {
        if (policy.tau < 0.0 || policy.tau > 1.0)
            throw ConfigError("confidence threshold must be in [0, 1]");
    }
}

}  // namespace

int dynamic_keep(const std::vector<double>& head_confidences, double tau) {
    int kept = 1;  // head 0 is always used
    for (size_t k = 1; k < head_confidences.size(); ++k) {
        if (head_confidences[k] >= tau)
            kept += 1;
        else
            break;
    }
    return kept;
}

std::string stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::Eos: return "eos";
        case StopReason::TokenCap: return "token_cap";
        case StopReason::IterationCap: return "iteration_cap";
    }
    return "?";
}

DecodeTrace decode_schedule(const WindowScorer& scorer, int w, int m_used,
                            const PredictionPolicy& policy, const DecodeCaps& caps, int sos_id,
                            int eos_id) {
    if (w < 1) throw ConfigError("window size must be >= 1");
    if (m_used < 1) throw ConfigError("need at least one head");
    validate_policy(policy, m_used);

    const auto t0 = Clock::now();
    DecodeTrace trace;
    TokenSeq S(static_cast<size_t>(w), sos_id);
    BlockAssignment blocks;
    blocks.push_block(w);

    bool stopped = false;
    while (!stopped) {
        if (trace.iterations >= caps.max_iterations) {
            trace.stopped_by = StopReason::IterationCap;
            break;
        }
        const std::vector<Mat<float>> window = scorer(S, blocks);
        trace.iterations += 1;

        IterationRecord rec;
        rec.window_begin = static_cast<long>(S.size()) - w;
        rec.window_len = w;
        for (int k = 0; k < m_used; ++k)
            rec.confidences.push_back(confidence_row(window[static_cast<size_t>(w - 1)], k));
        const int kept = policy.kind == PredictionPolicy::Kind::Static
                             ? policy.k
                             : dynamic_keep(rec.confidences, policy.tau);
        rec.kept_heads = kept;
        rec.appended = (w - 1) + kept;

        // Commit order: head 0 of the first w-1 window queries, then heads
        // 0..kept-1 of the last one. Non-first heads of non-last queries are
        // computed but discarded.
        TokenSeq committed;
        for (int j = 0; j < w - 1; ++j)
            committed.push_back(argmax_row(window[static_cast<size_t>(j)], 0));
        for (int k = 0; k < kept; ++k)
            committed.push_back(argmax_row(window[static_cast<size_t>(w - 1)], k));

        trace.per_iteration.push_back(std::move(rec));
        for (int tok : committed) {
            if (tok == eos_id) {
                trace.stopped_by = StopReason::Eos;
                stopped = true;
                break;
            }
            trace.emitted.push_back(tok);
            if (static_cast<long>(trace.emitted.size()) >= caps.max_tokens) {
                trace.stopped_by = StopReason::TokenCap;
                stopped = true;
                break;
            }
        }
        if (!stopped) {
            S.insert(S.end(), committed.begin(), committed.end());
            blocks.push_block(static_cast<int>(committed.size()));
        }
    }
    trace.wall_time = seconds_since(t0);
    return trace;
}

DecodeTrace decode_meta(const ModelRef& model, const GrayImage& image, int w, int m_used,
                        const PredictionPolicy& policy, const DecodeCaps& caps) {
    if (m_used > model.cfg.proj_heads)
        throw ConfigError("decode uses " + std::to_string(m_used) + " heads but the model has " +
                          std::to_string(model.cfg.proj_heads));
    const auto t0 = Clock::now();

    FeatureGridT<float> grid = encode_image<float>(model.cfg, model.params, image, nullptr);
    add_pe2d(grid);
    const Mat<float>& memory = flatten(grid);

    WindowScorer scorer = [&](const TokenSeq& S, const BlockAssignment& blocks) {
        const Mat<float> q = embed_queries(model.cfg, model.params, S);
        const AttentionMask mask = blocks_mask(blocks);
        const Mat<float> out =
            decoder_forward<float>(model.cfg, model.params, q, memory, mask, ForwardMode{}, nullptr);
        const auto scores = project_heads(model.cfg, model.params, out, m_used);
        std::vector<Mat<float>> window(static_cast<size_t>(w));
        for (int j = 0; j < w; ++j) {
            Mat<float>& wj = window[static_cast<size_t>(j)];
            wj.resize(m_used, model.cfg.score_dim);
            for (int k = 0; k < m_used; ++k)
                wj.row(k) = scores[static_cast<size_t>(k)].row(out.rows() - w + j);
        }
        return window;
    };

    DecodeTrace trace = decode_schedule(scorer, w, m_used, policy, caps, model.vocab.sos_id,
                                        model.vocab.eos_id);
    trace.wall_time = seconds_since(t0);
    return trace;
}

DecodeTrace decode_dan(const ModelRef& model, const GrayImage& image, const DecodeCaps& caps) {
    return decode_meta(model, image, 1, 1, PredictionPolicy::fixed(1), caps);
}

DecodeTrace decode_wdan(const ModelRef& model, const GrayImage& image, int w,
                        const DecodeCaps& caps) {
    return decode_meta(model, image, w, 1, PredictionPolicy::fixed(1), caps);
}

DecodeTrace decode_mtdan(const ModelRef& model, const GrayImage& image,
                         const PredictionPolicy& policy, const DecodeCaps& caps) {
    return decode_meta(model, image, 1, model.cfg.proj_heads, policy, caps);
}

DecodeTrace fasterdan_schedule(const SequenceScorer& scorer, const DecodeCaps& caps, int sos_id,
                               int eos_id, int newline_id) {
    const auto t0 = Clock::now();
    DecodeTrace trace;

    // stage 1: first character of each line, then <e>
    TokenSeq s1{sos_id};
    std::vector<int> s1_line{0}, s1_offset{0};
    TokenSeq first_chars;
    bool capped = false;
    for (;;) {
        if (trace.iterations >= caps.max_iterations) {
            trace.stopped_by = StopReason::IterationCap;
            capped = true;
            break;
        }
        const Mat<float> scores =
            scorer(s1, s1_line, s1_offset, causal_mask(static_cast<int>(s1.size())));
        const Eigen::Index last = scores.rows() - 1;
        const int tok = argmax_row(scores, last);
        trace.iterations += 1;
        IterationRecord rec;
        rec.window_begin = static_cast<long>(s1.size()) - 1;
        rec.window_len = 1;
        rec.kept_heads = 1;
        rec.confidences.push_back(confidence_row(scores, last));
        if (tok == eos_id) {
            rec.appended = 0;
            trace.per_iteration.push_back(std::move(rec));
            trace.stopped_by = StopReason::Eos;
            break;
        }
        rec.appended = 1;
        trace.per_iteration.push_back(std::move(rec));
        first_chars.push_back(tok);
        s1.push_back(tok);
        s1_line.push_back(0);
        s1_offset.push_back(static_cast<int>(first_chars.size()));
        if (static_cast<long>(first_chars.size()) >= caps.max_tokens) {
            trace.stopped_by = StopReason::TokenCap;
            capped = true;
            break;
        }
    }

    const int n_lines = static_cast<int>(first_chars.size());
    if (n_lines > 1 && newline_id < 0)
        throw MismatchError("multi-line decode needs the newline character in the alphabet");

    std::vector<TokenSeq> streams;
    for (int tok : first_chars) streams.push_back({tok});
    std::vector<bool> done(static_cast<size_t>(n_lines), false);

    auto total_tokens = [&]() {
        long n = n_lines > 0 ? static_cast<long>(n_lines) - 1 : 0;  // newline joins
        for (const auto& s : streams) n += static_cast<long>(s.size());
        return n;
    };

    // stage 2: complete all lines in parallel until each predicts its <e>
    while (!capped && n_lines > 0 && std::count(done.begin(), done.end(), false) > 0) {
        if (trace.iterations >= caps.max_iterations) {
            trace.stopped_by = StopReason::IterationCap;
            capped = true;
            break;
        }
        TokenSeq ids = s1;
        std::vector<int> line = s1_line, offset = s1_offset;
        std::vector<int> line2, offset2;
        std::vector<Eigen::Index> last_row(static_cast<size_t>(n_lines));
        for (int l = 0; l < n_lines; ++l) {
            const auto& s = streams[static_cast<size_t>(l)];
            for (size_t j = 0; j < s.size(); ++j) {
                ids.push_back(s[j]);
                line.push_back(l + 1);
                offset.push_back(static_cast<int>(j) + 1);
                line2.push_back(l + 1);
                offset2.push_back(static_cast<int>(j) + 1);
            }
            last_row[static_cast<size_t>(l)] = static_cast<Eigen::Index>(ids.size()) - 1;
        }
        const AttentionMask mask = fasterdan_mask(static_cast<int>(s1.size()), line2, offset2);
        const Mat<float> scores = scorer(ids, line, offset, mask);
        trace.iterations += 1;

        IterationRecord rec;
        rec.window_begin = static_cast<long>(s1.size());
        rec.window_len = static_cast<int>(std::count(done.begin(), done.end(), false));
        rec.kept_heads = 1;
        for (int l = 0; l < n_lines; ++l) {
            if (done[static_cast<size_t>(l)]) continue;
            const int tok = argmax_row(scores, last_row[static_cast<size_t>(l)]);
            rec.confidences.push_back(confidence_row(scores, last_row[static_cast<size_t>(l)]));
            if (tok == eos_id) {
                done[static_cast<size_t>(l)] = true;
            } else {
                streams[static_cast<size_t>(l)].push_back(tok);
                rec.appended += 1;
            }
        }
        trace.per_iteration.push_back(std::move(rec));
        if (total_tokens() >= caps.max_tokens) {
            trace.stopped_by = StopReason::TokenCap;
            capped = true;
        }
    }

    for (int l = 0; l < n_lines; ++l) {
        if (l > 0) trace.emitted.push_back(newline_id);
        trace.emitted.insert(trace.emitted.end(), streams[static_cast<size_t>(l)].begin(),
                             streams[static_cast<size_t>(l)].end());
    }
    if (static_cast<long>(trace.emitted.size()) > caps.max_tokens)
        trace.emitted.resize(static_cast<size_t>(caps.max_tokens));
    if (!capped) trace.stopped_by = StopReason::Eos;
    trace.wall_time = seconds_since(t0);
    return trace;
}

DecodeTrace decode_fasterdan(const ModelRef& model, const GrayImage& image,
                             const DecodeCaps& caps) {
    const auto t0 = Clock::now();
    const Vocab& vocab = model.vocab;

    FeatureGridT<float> grid = encode_image<float>(model.cfg, model.params, image, nullptr);
    add_pe2d(grid);
    const Mat<float>& memory = flatten(grid);

    SequenceScorer scorer = [&](const TokenSeq& ids, const std::vector<int>& line,
                                const std::vector<int>& offset, const AttentionMask& mask) {
        const Mat<float> q = embed_queries_dual(model.cfg, model.params, ids, line, offset);
        const Mat<float> out =
            decoder_forward<float>(model.cfg, model.params, q, memory, mask, ForwardMode{}, nullptr);
        return project_heads(model.cfg, model.params, out, 1)[0];
    };

    const int newline_id = vocab.contains(U'\n') ? vocab.id_of.at(U'\n') : -1;
    DecodeTrace trace =
        fasterdan_schedule(scorer, caps, vocab.sos_id, vocab.eos_id, newline_id);
    trace.wall_time = seconds_since(t0);
    return trace;
}

std::string trace_to_json(const DecodeTrace& trace) {
    nlohmann::json iters = nlohmann::json::array();
    for (const auto& r : trace.per_iteration)
        iters.push_back({{"window_begin", r.window_begin},
                         {"window_len", r.window_len},
                         {"kept_heads", r.kept_heads},
                         {"appended", r.appended},
                         {"confidences", r.confidences}});
    const nlohmann::json j{{"emitted", trace.emitted},
                           {"iterations", trace.iterations},
                           {"wall_time", trace.wall_time},
                           {"stopped_by", stop_reason_name(trace.stopped_by)},
                           {"per_iteration", iters}};
    return j.dump(2);
}

}  // namespace pagedec

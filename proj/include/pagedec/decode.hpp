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

#include "pagedec/nncore.hpp"

#include <functional>

// Greedy decoding strategies. The shared engine runs the windowed
// multi-token schedule: a window of w queries is processed per iteration,
// the first w-1 keep their head-0 prediction and the last keeps between 1
// and m_used head predictions depending on the policy. Committed tokens of
// one iteration form one attention block, so every committed token keeps a
// stable attention set across iterations.

namespace pagedec {

struct PredictionPolicy {
    enum class Kind { Static, Dynamic };
    Kind kind = Kind::Static;
    int k = 1;         // heads kept per iteration (static)
    double tau = 0.9;  // confidence threshold (dynamic)

    static PredictionPolicy fixed(int k) { return {Kind::Static, k, 0.0}; }
    static PredictionPolicy confidence(double tau) { return {Kind::Dynamic, 1, tau}; }
};

/// Number of head predictions kept for one query: head 0 always, then heads
/// while their confidence stays >= tau.
int dynamic_keep(const std::vector<double>& head_confidences, double tau);

struct DecodeCaps {
    long max_tokens = 5000;
    long max_iterations = 5000;
};

enum class StopReason { Eos, TokenCap, IterationCap };
std::string stop_reason_name(StopReason r);

struct IterationRecord {
    long window_begin = 0;  // index of the first window query in S
    int window_len = 0;
    int kept_heads = 0;     // heads kept on the last window query
    int appended = 0;       // tokens committed by this iteration
    std::vector<double> confidences;  // per head of the last query (or per line)
};

struct DecodeTrace {
    TokenSeq emitted;  // never contains <e>
    long iterations = 0;
    std::vector<IterationRecord> per_iteration;
    double wall_time = 0.0;
    StopReason stopped_by = StopReason::Eos;
};

std::string trace_to_json(const DecodeTrace& trace);

/// Logits for the last w positions of S under the blocks mask: w entries,
/// each heads_used x |A|.
using WindowScorer =
    std::function<std::vector<Mat<float>>(const TokenSeq& S, const BlockAssignment& blocks)>;

/// The schedule engine, independent of any model. Exposed so schedule
/// arithmetic can be driven by scripted scorers.
DecodeTrace decode_schedule(const WindowScorer& scorer, int w, int m_used,
                            const PredictionPolicy& policy, const DecodeCaps& caps, int sos_id,
                            int eos_id);

/// Head-0 logits for every position of a two-stage sequence (one row per
/// token) given its (line, offset) layout and mask.
using SequenceScorer =
    std::function<Mat<float>(const TokenSeq& ids, const std::vector<int>& line,
                             const std::vector<int>& offset, const AttentionMask& mask)>;

/// Two-stage engine: causal first-character pass, then per-line parallel
/// completion. newline_id joins lines (-1 when the alphabet has none, which
/// is an error for multi-line results).
DecodeTrace fasterdan_schedule(const SequenceScorer& scorer, const DecodeCaps& caps, int sos_id,
                               int eos_id, int newline_id);

struct ModelRef {
    const ModelConfig& cfg;
    const Params& params;
    const Vocab& vocab;
};

DecodeTrace decode_meta(const ModelRef& model, const GrayImage& image, int w, int m_used,
                        const PredictionPolicy& policy, const DecodeCaps& caps = {});

/// w = 1, single head, causal: one token per iteration.
DecodeTrace decode_dan(const ModelRef& model, const GrayImage& image, const DecodeCaps& caps = {});

/// Head 0 only, advancing exactly w tokens per iteration.
DecodeTrace decode_wdan(const ModelRef& model, const GrayImage& image, int w,
                        const DecodeCaps& caps = {});

/// w = 1 with all model heads under the given policy.
DecodeTrace decode_mtdan(const ModelRef& model, const GrayImage& image,
                         const PredictionPolicy& policy, const DecodeCaps& caps = {});

/// Two-stage decode: causal first-character pass, then all lines completed
/// in parallel; lines are joined with the newline character.
DecodeTrace decode_fasterdan(const ModelRef& model, const GrayImage& image,
                             const DecodeCaps& caps = {});

}  // namespace pagedec

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
#include "pagedec/synthdoc.hpp"

#include <functional>

namespace pagedec {

enum class Variant { Dan, WDan, MtDan, Meta, FasterDan };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct Curriculum {
    int start_lines = 1;
    int end_lines = 6;
    double ramp = 0.5;  // fraction of total steps spent ramping
};

struct TrainConfig {
    Variant variant = Variant::Dan;
    int w = 1;
    int m = 1;
    double lr = 1e-4;
    long steps = 1000;
    int batch = 4;
    Curriculum curriculum;
    uint64_t seed = 0;

    void validate() const;
};

/// Line budget for the sample synthesized/selected at `step`: linear ramp
/// from start to end over the first `ramp` fraction of steps (round half
/// up), constant afterwards.
int curriculum_lines(long step, long total_steps, const Curriculum& cur);

// ---------------------------------------------------------------------------
// losses

namespace detail {

// Softmax cross-entropy over one score row; adds the (softmax - onehot)
// gradient scaled by `gscale` into grad_row when grads are wanted.
template <typename T>
double ce_row(const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& row, int target,
              double gscale, Mat<T>* grad, Eigen::Index grad_row) {
    const T mx = row.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < row.cols(); ++j)
        sum += std::exp(static_cast<double>(row(0, j) - mx));
    const double lse = static_cast<double>(mx) + std::log(sum);
    if (grad) {
        for (Eigen::Index j = 0; j < row.cols(); ++j)
            (*grad)(grad_row, j) +=
                static_cast<T>(std::exp(static_cast<double>(row(0, j)) - lse) * gscale);
        (*grad)(grad_row, target) -= static_cast<T>(gscale);
    }
    return lse - static_cast<double>(row(0, target));
}

}  // namespace detail

// Teacher-forced loss for the windowed multi-token objective. The decoder
// input is S[0..T-1] with S = <s>*w ++ main and T = |main|; the self mask is
// windowed with block size w; position p, head k is scored against
// target_at(p + w + k). Mean over the T*m terms. With w = m = 1 this is the
// plain next-token cross entropy. Accumulates into *grads when non-null.
template <typename T>
double loss_meta(const ModelConfig& cfg, const ParamsT<T>& params, const Vocab& vocab,
                 const GrayImage& image, const TokenSeq& y, int w, int m, const ForwardMode& mode,
                 ParamsT<T>* grads) {
    if (y.empty()) throw ConfigError("empty target sequence");
    if (m > cfg.proj_heads) throw ConfigError("loss uses more heads than the model has");
    const PaddedTargets pad = pad_targets(vocab, y, w, m);
    const TokenSeq input = pad.input_ids();
    const int seq_len = static_cast<int>(pad.main.size());

    EncoderActs<T> eacts;
    FeatureGridT<T> grid = encode_image(cfg, params, image, grads ? &eacts : nullptr);
    add_pe2d(grid);
    const Mat<T>& memory = grid.values;

    Mat<T> q = embed_queries(cfg, params, input);
    const AttentionMask mask = windowed_mask(seq_len, w);
    DecoderActs<T> dacts;
    Mat<T> out = decoder_forward(cfg, params, q, memory, mask, mode, grads ? &dacts : nullptr);
    std::vector<Mat<T>> scores = project_heads(cfg, params, out, m);

    std::vector<Mat<T>> dscores;
    if (grads) {
        dscores.resize(static_cast<size_t>(m));
        for (auto& d : dscores) d = Mat<T>::Zero(seq_len, cfg.score_dim);
    }
    const double gscale = 1.0 / (static_cast<double>(seq_len) * m);
    double loss = 0.0;
    for (int p = 0; p < seq_len; ++p) {
        for (int k = 0; k < m; ++k) {
            const int target = pad.target_at(static_cast<size_t>(p + w + k));
            loss += detail::ce_row<T>(scores[static_cast<size_t>(k)].row(p), target, gscale,
                                      grads ? &dscores[static_cast<size_t>(k)] : nullptr, p);
        }
    }
    loss *= gscale;

    if (grads) {
        Mat<T> dout;
        project_heads_backward(params, out, dscores, *grads, dout);
        Mat<T> dq, dmemory;
        decoder_backward(cfg, params, memory, dacts, dout, *grads, dq, dmemory);
        encoder_backward(cfg, params, eacts, dmemory, *grads);
        embed_backward(input, dq, *grads);
    }
    return loss;
}

// Teacher-forced layout of the two-stage objective for one page. The shared
// token sequence S and its (line, offset) positions are also what the
// two-stage decoder feeds forward, so decode and loss stay consistent.
struct TwoStageLayout {
    TokenSeq ids;
    std::vector<int> line, offset;  // per token
    std::vector<int> targets;       // per token, aligned with ids
    int n_stage1 = 0;

    AttentionMask mask() const {
        return fasterdan_mask(n_stage1, std::vector<int>(line.begin() + n_stage1, line.end()),
                              std::vector<int>(offset.begin() + n_stage1, offset.end()));
    }
};

/// Stage 1 is <s> plus each line's first character under a causal mask,
/// predicting the next first character and finally <e>. Stage 2 re-embeds
/// each line (first character included) with (line, offset) positions and
/// predicts the line's remaining characters plus a per-line <e>.
TwoStageLayout two_stage_layout(const Vocab& vocab, const std::vector<std::string>& line_texts);

template <typename T>
double loss_fasterdan(const ModelConfig& cfg, const ParamsT<T>& params, const Vocab& vocab,
                      const GrayImage& image, const std::vector<std::string>& line_texts,
                      const ForwardMode& mode, ParamsT<T>* grads) {
    if (line_texts.empty()) throw ConfigError("sample has no line annotations");
    const TwoStageLayout lay = two_stage_layout(vocab, line_texts);
    const int n = static_cast<int>(lay.ids.size());

    EncoderActs<T> eacts;
    FeatureGridT<T> grid = encode_image(cfg, params, image, grads ? &eacts : nullptr);
    add_pe2d(grid);
    const Mat<T>& memory = grid.values;

    Mat<T> q = embed_queries_dual(cfg, params, lay.ids, lay.line, lay.offset);
    const AttentionMask mask = lay.mask();
    DecoderActs<T> dacts;
    Mat<T> out = decoder_forward(cfg, params, q, memory, mask, mode, grads ? &dacts : nullptr);
    std::vector<Mat<T>> scores = project_heads(cfg, params, out, 1);

    std::vector<Mat<T>> dscores;
    if (grads) dscores.assign(1, Mat<T>::Zero(n, cfg.score_dim));
    const double gscale = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (int p = 0; p < n; ++p)
        loss += detail::ce_row<T>(scores[0].row(p), lay.targets[static_cast<size_t>(p)], gscale,
                                  grads ? &dscores[0] : nullptr, p);
    loss *= gscale;

    if (grads) {
        Mat<T> dout;
        project_heads_backward(params, out, dscores, *grads, dout);
        Mat<T> dq, dmemory;
        decoder_backward(cfg, params, memory, dacts, dout, *grads, dq, dmemory);
        encoder_backward(cfg, params, eacts, dmemory, *grads);
        embed_backward(lay.ids, dq, *grads);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// optimization and persistence

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<float> m, v;
};

/// One adaptive-moment update of params in place.
void adam_step(AdamState& st, double lr, Params& params, const Params& grads);

struct TrainSample {
    GrayImage image;
    std::string text;
    std::vector<std::string> line_texts;
};

struct TrainState {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    Vocab vocab;
    Params params;
    AdamState adam;
    long step = 0;
};

TrainState init_train_state(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            const Vocab& vocab);

/// One optimizer step over the batch; per-sample losses and gradients are
/// averaged. Throws DivergenceError on a non-finite loss.
double train_step(TrainState& state, const std::vector<const TrainSample*>& batch);

void save_checkpoint(const TrainState& state, const std::string& dir);
TrainState load_checkpoint(const std::string& dir);

/// Copies tensors from another checkpoint into `state` (transfer init).
/// Every shape must match; mismatches throw naming the tensor.
void load_params_from(TrainState& state, const std::string& dir);

// Dataset-driven training. Samples come from the manifest's train split;
// the curriculum caps the line count of the pages a step may draw from.
struct Dataset {
    std::vector<TrainSample> train, val, test;
    SynthConfig config;
};

Dataset load_dataset(const std::string& dataset_dir);
Vocab vocab_for_dataset(const Dataset& ds);

struct StepLog {
    long step = 0;
    double loss = 0.0;
    double lr = 0.0;
    int lines_cap = 0;
};

/// Runs `steps` training steps (on top of state.step), invoking on_step per
/// step when provided.
void train_loop(TrainState& state, const Dataset& ds, long steps,
                const std::function<void(const StepLog&)>& on_step);

}  // namespace pagedec

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

#include "pagedec/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace pagedec {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Dan: return "dan";
        case Variant::WDan: return "wdan";
        case Variant::MtDan: return "mtdan";
        case Variant::Meta: return "meta";
        case Variant::FasterDan: return "fasterdan";
    }
    throw ConfigError("bad variant enum");
}

Variant variant_from_name(const std::string& name) {
    if (name == "dan") return Variant::Dan;
    if (name == "wdan") return Variant::WDan;
    if (name == "mtdan") return Variant::MtDan;
    if (name == "meta") return Variant::Meta;
    if (name == "fasterdan") return Variant::FasterDan;
    throw ConfigError("unknown variant \"" + name + "\" (expected dan|wdan|mtdan|meta|fasterdan)");
}

void TrainConfig::validate() const {
    if (w < 1 || m < 1) throw ConfigError("w and m must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch < 1) throw ConfigError("batch size must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (curriculum.start_lines < 1 || curriculum.end_lines < curriculum.start_lines)
        throw ConfigError("curriculum line range invalid");
    if (curriculum.ramp < 0.0 || curriculum.ramp > 1.0)
        throw ConfigError("curriculum ramp must be in [0, 1]");
    switch (variant) {
        case Variant::Dan:
        case Variant::FasterDan:
            if (w != 1 || m != 1)
                throw ConfigError("variant " + variant_name(variant) + " requires w = 1 and m = 1");
            break;
        case Variant::WDan:
            if (m != 1) throw ConfigError("variant wdan requires m = 1");
            break;
        case Variant::MtDan:
            if (w != 1) throw ConfigError("variant mtdan requires w = 1");
            break;
        case Variant::Meta:
            break;
    }
}

int curriculum_lines(long step, long total_steps, const Curriculum& cur) {
    if (step < 0) throw ConfigError("negative step");
    const long ramp_steps = static_cast<long>(std::llround(cur.ramp * static_cast<double>(total_steps)));
    double frac = 1.0;
    if (ramp_steps > 0)
        frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(ramp_steps));
    const double lines = cur.start_lines + (cur.end_lines - cur.start_lines) * frac;
    return static_cast<int>(std::floor(lines + 0.5));
}

TwoStageLayout two_stage_layout(const Vocab& vocab, const std::vector<std::string>& line_texts) {
    if (line_texts.empty()) throw ConfigError("sample has no line annotations");
    std::vector<TokenSeq> lines;
    for (const auto& t : line_texts) {
        TokenSeq ids = encode_text(vocab, t);
        if (ids.empty()) throw ConfigError("empty line in two-stage layout");
        lines.push_back(std::move(ids));
    }
    const int n_lines = static_cast<int>(lines.size());

    TwoStageLayout lay;
    lay.n_stage1 = n_lines + 1;
    // stage 1: <s>, then each line's first character; targets are the next
    // first characters and finally <e>
    lay.ids.push_back(vocab.sos_id);
    lay.line.push_back(0);
    lay.offset.push_back(0);
    for (int l = 0; l < n_lines; ++l) {
        lay.targets.push_back(lines[static_cast<size_t>(l)][0]);
        lay.ids.push_back(lines[static_cast<size_t>(l)][0]);
        lay.line.push_back(0);
        lay.offset.push_back(l + 1);
    }
    lay.targets.push_back(vocab.eos_id);
    // stage 2: each full line re-embedded at (line, offset), predicting its
    // own continuation and a per-line <e>
    for (int l = 0; l < n_lines; ++l) {
        const TokenSeq& ln = lines[static_cast<size_t>(l)];
        for (size_t j = 0; j < ln.size(); ++j) {
            lay.ids.push_back(ln[j]);
            lay.line.push_back(l + 1);
            lay.offset.push_back(static_cast<int>(j) + 1);
            lay.targets.push_back(j + 1 < ln.size() ? ln[j + 1] : vocab.eos_id);
        }
    }
    return lay;
}

// ---------------------------------------------------------------------------

namespace {

struct TensorRef {
    float* data;
    size_t size;
};

std::vector<TensorRef> flat_tensors(Params& p) {
    std::vector<TensorRef> out;
    visit_tensors(p, [&](const std::string&, auto& t) {
        out.push_back({t.data(), static_cast<size_t>(t.size())});
    });
    return out;
}

std::vector<TensorRef> flat_tensors(const Params& p) {
    std::vector<TensorRef> out;
    visit_tensors(p, [&](const std::string&, const auto& t) {
        out.push_back({const_cast<float*>(t.data()), static_cast<size_t>(t.size())});
    });
    return out;
}

}  // namespace

void adam_step(AdamState& st, double lr, Params& params, const Params& grads) {
    auto pt = flat_tensors(params);
    auto gt = flat_tensors(grads);
    size_t total = 0;
    for (const auto& t : pt) total += t.size;
    if (st.m.empty()) {
        st.m.assign(total, 0.0f);
        st.v.assign(total, 0.0f);
    }
    if (st.m.size() != total) throw ConfigError("optimizer state does not match the model");

    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    size_t off = 0;
    for (size_t i = 0; i < pt.size(); ++i) {
        float* w = pt[i].data;
        const float* g = gt[i].data;
        for (size_t j = 0; j < pt[i].size; ++j) {
            float& m = st.m[off + j];
            float& v = st.v[off + j];
            m = static_cast<float>(st.beta1 * m + (1.0 - st.beta1) * g[j]);
            v = static_cast<float>(st.beta2 * v + (1.0 - st.beta2) * g[j] * g[j]);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + st.eps));
        }
        off += pt[i].size;
    }
}

TrainState init_train_state(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            const Vocab& vocab) {
    train_cfg.validate();
    ModelConfig mc = model_cfg;
    mc.score_dim = vocab.score_dim();
    mc.proj_heads = train_cfg.m;
    mc.validate();
    TrainState st;
    st.model_cfg = mc;
    st.train_cfg = train_cfg;
    st.vocab = vocab;
    st.params = init_params<float>(mc, splitmix64(train_cfg.seed ^ 0x70a5a5a5ULL));
    return st;
}

double train_step(TrainState& state, const std::vector<const TrainSample*>& batch) {
    if (batch.empty()) throw ConfigError("empty batch");
    Params grads = zeros_like(state.params);
    const uint64_t step_seed =
        splitmix64(state.train_cfg.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(state.step + 1)));
    double loss_sum = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
        ForwardMode mode;
        mode.train = true;
        mode.dropout_seed = splitmix64(step_seed + i);
        const TrainSample& s = *batch[i];
        if (state.train_cfg.variant == Variant::FasterDan) {
            loss_sum += loss_fasterdan(state.model_cfg, state.params, state.vocab, s.image,
                                       s.line_texts, mode, &grads);
        } else {
            const TokenSeq y = encode_text(state.vocab, s.text);
            loss_sum += loss_meta(state.model_cfg, state.params, state.vocab, s.image, y,
                                  state.train_cfg.w, state.train_cfg.m, mode, &grads);
        }
    }
    const double loss = loss_sum / static_cast<double>(batch.size());
    if (!std::isfinite(loss))
        throw DivergenceError("divergence at step " + std::to_string(state.step));
    const float inv_b = 1.0f / static_cast<float>(batch.size());
    visit_tensors(grads, [&](const std::string&, auto& t) { t *= inv_b; });
    adam_step(state.adam, state.train_cfg.lr, state.params, grads);
    state.step += 1;
    return loss;
}

Dataset load_dataset(const std::string& dataset_dir) {
    const Manifest mf = load_manifest(dataset_dir);
    Dataset ds;
    ds.config = mf.config;
    for (const auto& e : mf.samples) {
        TrainSample s;
        s.image = read_pgm((std::filesystem::path(dataset_dir) / e.file).string());
        s.text = e.text;
        for (const auto& ln : e.lines) s.line_texts.push_back(ln.text);
        if (e.split == "train")
            ds.train.push_back(std::move(s));
        else if (e.split == "val")
            ds.val.push_back(std::move(s));
        else if (e.split == "test")
            ds.test.push_back(std::move(s));
        else
            throw ConfigError("unknown split \"" + e.split + "\" in manifest");
    }
    return ds;
}

Vocab vocab_for_dataset(const Dataset& ds) {
    std::vector<std::string> texts{ds.config.corpus, "\n"};
    for (const auto& s : ds.train) texts.push_back(s.text);
    for (const auto& s : ds.val) texts.push_back(s.text);
    for (const auto& s : ds.test) texts.push_back(s.text);
    return build_vocab(texts);
}

void train_loop(TrainState& state, const Dataset& ds, long steps,
                const std::function<void(const StepLog&)>& on_step) {
    if (ds.train.empty()) throw ConfigError("empty training split");
    // Pages are synthesized per step from the dataset's generator config so
    // the model never sees a page twice; the curriculum caps the line count.
    for (long k = 0; k < steps; ++k) {
        const int cap =
            curriculum_lines(state.step, state.train_cfg.steps, state.train_cfg.curriculum);
        SynthConfig gen = ds.config;
        gen.max_lines = std::min(ds.config.max_lines, cap);
        gen.min_lines = std::min(ds.config.min_lines, gen.max_lines);
        const uint64_t step_seed = splitmix64(state.train_cfg.seed ^ 0x5bf03635ULL) ^
                                   static_cast<uint64_t>(state.step);
        std::vector<TrainSample> samples;
        std::vector<const TrainSample*> batch;
        samples.reserve(static_cast<size_t>(state.train_cfg.batch));
        for (int b = 0; b < state.train_cfg.batch; ++b) {
            const DocumentSample doc =
                render_document(gen, splitmix64(step_seed + static_cast<uint64_t>(b)));
            TrainSample s;
            s.image = doc.image;
            s.text = doc.text;
            for (const auto& ln : doc.lines) s.line_texts.push_back(ln.text);
            samples.push_back(std::move(s));
        }
        for (const auto& s : samples) batch.push_back(&s);
        const double loss = train_step(state, batch);
        if (on_step) on_step({state.step - 1, loss, state.train_cfg.lr, cap});
    }
}

}  // namespace pagedec

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

#include "pagedec/evaluate.hpp"

#include <atomic>
#include <thread>

namespace pagedec {

DecodeTrace decode_variant(const ModelRef& model, const GrayImage& image, const EvalOptions& opt) {
    switch (opt.variant) {
        case Variant::Dan: return decode_dan(model, image, opt.caps);
        case Variant::WDan: return decode_wdan(model, image, opt.w, opt.caps);
        case Variant::MtDan: return decode_mtdan(model, image, opt.policy, opt.caps);
        case Variant::Meta: return decode_meta(model, image, opt.w, opt.m, opt.policy, opt.caps);
        case Variant::FasterDan: return decode_fasterdan(model, image, opt.caps);
    }
    throw ConfigError("bad variant enum");
}

EvalReport evaluate_samples(const TrainState& state, const std::vector<TrainSample>& samples,
                            const EvalOptions& opt) {
    const ModelRef model{state.model_cfg, state.params, state.vocab};
    for (const auto& s : samples)
        encode_text(state.vocab, s.text);  // alphabet check before any decode

    EvalReport report;
    report.per_sample.resize(samples.size());
    auto eval_one = [&](size_t i) {
        const TrainSample& s = samples[i];
        const DecodeTrace trace = decode_variant(model, s.image, opt);
        SampleEval row;
        row.id = std::to_string(i);
        const std::string pred = decode_tokens(state.vocab, trace.emitted);
        row.cer = cer(s.text, pred);
        row.wer = wer(s.text, pred);
        row.iterations = trace.iterations;
        row.emitted_len = static_cast<long>(trace.emitted.size());
        row.wall_time = trace.wall_time;
        report.per_sample[i] = std::move(row);
    };

    const int jobs = std::max(1, opt.jobs);
    if (jobs == 1 || samples.size() < 2) {
        for (size_t i = 0; i < samples.size(); ++i) eval_one(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) {
            pool.emplace_back([&]() {
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= samples.size()) return;
                    eval_one(i);
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    report.finalize();
    return report;
}

EvalReport evaluate(const TrainState& state, const std::string& dataset_dir,
                    const std::string& split, const EvalOptions& opt) {
    const Dataset ds = load_dataset(dataset_dir);
    const std::vector<TrainSample>* samples = nullptr;
    if (split == "train")
        samples = &ds.train;
    else if (split == "val")
        samples = &ds.val;
    else if (split == "test")
        samples = &ds.test;
    else
        throw ConfigError("unknown split \"" + split + "\"");
    EvalReport report = evaluate_samples(state, *samples, opt);
    for (size_t i = 0; i < report.per_sample.size(); ++i) {
        const std::string prefix = split + "_";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s%05zu", prefix.c_str(), i);
        report.per_sample[i].id = buf;
    }
    return report;
}

}  // namespace pagedec

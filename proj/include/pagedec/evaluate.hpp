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

#include "pagedec/decode.hpp"
#include "pagedec/metrics.hpp"
#include "pagedec/train.hpp"

namespace pagedec {

struct EvalOptions {
    Variant variant = Variant::Dan;
    int w = 1;
    int m = 1;
    PredictionPolicy policy = PredictionPolicy::fixed(1);
    DecodeCaps caps;
    int jobs = 1;  // worker threads; 1 preserves timing fidelity
};

/// Decodes one image with the requested strategy.
DecodeTrace decode_variant(const ModelRef& model, const GrayImage& image, const EvalOptions& opt);

/// Decodes every sample of the split with batch size 1 and macro-averages
/// CER/WER over samples. Ground truth outside the model alphabet throws
/// MismatchError.
EvalReport evaluate(const TrainState& state, const std::string& dataset_dir,
                    const std::string& split, const EvalOptions& opt);

/// Same, over already loaded samples (ids are their indices).
EvalReport evaluate_samples(const TrainState& state, const std::vector<TrainSample>& samples,
                            const EvalOptions& opt);

}  // namespace pagedec

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
#include "pagedec/synthdoc.hpp"
#include "pagedec/train.hpp"

#include <json.hpp>

// JSON (de)serialization of every run-level configuration object. Parsers
// reject unknown keys so a typo in a config file fails loudly.

namespace pagedec {

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json policy_to_json(const PredictionPolicy& policy);
PredictionPolicy policy_from_json(const nlohmann::json& j);

/// Everything one run needs, as a single JSON document with sections
/// "synth", "model", "train", "policy" and "paths". Command-line flags
/// override whatever the file sets.
struct RunConfig {
    SynthConfig synth;
    ModelConfig model;
    TrainConfig train;
    PredictionPolicy policy = PredictionPolicy::fixed(1);
    std::string data_dir;
    std::string ckpt_dir;
    std::string out_path;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

}  // namespace pagedec

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

#include "pagedec/configio.hpp"

#include "json_util.hpp"

namespace pagedec {

nlohmann::json policy_to_json(const PredictionPolicy& policy) {
    if (policy.kind == PredictionPolicy::Kind::Static)
        return {{"kind", "static"}, {"k", policy.k}};
    return {{"kind", "dynamic"}, {"tau", policy.tau}};
}

PredictionPolicy policy_from_json(const nlohmann::json& j) {
    check_keys(j, "policy", {"kind", "k", "tau"});
    PredictionPolicy policy;
    const std::string kind = j.contains("kind") ? j.at("kind").get<std::string>() : "static";
    if (kind == "static")
        policy.kind = PredictionPolicy::Kind::Static;
    else if (kind == "dynamic")
        policy.kind = PredictionPolicy::Kind::Dynamic;
    else
        throw ConfigError("policy kind must be \"static\" or \"dynamic\"");
    if (j.contains("k")) policy.k = j.at("k").get<int>();
    if (j.contains("tau")) policy.tau = j.at("tau").get<double>();
    return policy;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    check_keys(j, "run config", {"synth", "model", "train", "policy", "paths"});
    RunConfig cfg;
    if (j.contains("synth")) cfg.synth = synth_config_from_json(j.at("synth"));
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    if (j.contains("policy")) cfg.policy = policy_from_json(j.at("policy"));
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        check_keys(p, "paths", {"data", "ckpt", "out"});
        if (p.contains("data")) cfg.data_dir = p.at("data").get<std::string>();
        if (p.contains("ckpt")) cfg.ckpt_dir = p.at("ckpt").get<std::string>();
        if (p.contains("out")) cfg.out_path = p.at("out").get<std::string>();
    }
    return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    return {{"synth", synth_config_to_json(cfg.synth)},
            {"model", model_config_to_json(cfg.model)},
            {"train", train_config_to_json(cfg.train)},
            {"policy", policy_to_json(cfg.policy)},
            {"paths",
             {{"data", cfg.data_dir}, {"ckpt", cfg.ckpt_dir}, {"out", cfg.out_path}}}};
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(load_json_file(path));
}

}  // namespace pagedec

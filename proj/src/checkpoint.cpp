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

#include <array>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace pagedec {

static constexpr const char* kFormatTag = "pagedec-checkpoint-v1";

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return {{"channels", cfg.channels},
            {"layers", cfg.layers},
            {"attn_heads", cfg.attn_heads},
            {"ffn_width", cfg.ffn_width},
            {"proj_heads", cfg.proj_heads},
            {"score_dim", cfg.score_dim},
            {"dropout", cfg.dropout},
            {"encoder_channels", cfg.enc_channels()}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    check_keys(j, "model config",
               {"channels", "layers", "attn_heads", "ffn_width", "proj_heads", "score_dim",
                "dropout", "encoder_channels"});
    ModelConfig cfg;
    if (j.contains("channels")) cfg.channels = j.at("channels").get<int>();
    if (j.contains("layers")) cfg.layers = j.at("layers").get<int>();
    if (j.contains("attn_heads")) cfg.attn_heads = j.at("attn_heads").get<int>();
    if (j.contains("ffn_width")) cfg.ffn_width = j.at("ffn_width").get<int>();
    if (j.contains("proj_heads")) cfg.proj_heads = j.at("proj_heads").get<int>();
    if (j.contains("score_dim")) cfg.score_dim = j.at("score_dim").get<int>();
    if (j.contains("dropout")) cfg.dropout = j.at("dropout").get<float>();
    if (j.contains("encoder_channels"))
        cfg.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
    return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return {{"variant", variant_name(cfg.variant)},
            {"w", cfg.w},
            {"m", cfg.m},
            {"lr", cfg.lr},
            {"steps", cfg.steps},
            {"batch", cfg.batch},
            {"curriculum",
             {{"start_lines", cfg.curriculum.start_lines},
              {"end_lines", cfg.curriculum.end_lines},
              {"ramp", cfg.curriculum.ramp}}},
            {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    check_keys(j, "train config",
               {"variant", "w", "m", "lr", "steps", "batch", "curriculum", "seed"});
    TrainConfig cfg;
    if (j.contains("variant")) cfg.variant = variant_from_name(j.at("variant").get<std::string>());
    if (j.contains("w")) cfg.w = j.at("w").get<int>();
    if (j.contains("m")) cfg.m = j.at("m").get<int>();
    if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
    if (j.contains("steps")) cfg.steps = j.at("steps").get<long>();
    if (j.contains("batch")) cfg.batch = j.at("batch").get<int>();
    if (j.contains("curriculum")) {
        const auto& c = j.at("curriculum");
        check_keys(c, "curriculum", {"start_lines", "end_lines", "ramp"});
        if (c.contains("start_lines")) cfg.curriculum.start_lines = c.at("start_lines").get<int>();
        if (c.contains("end_lines")) cfg.curriculum.end_lines = c.at("end_lines").get<int>();
        if (c.contains("ramp")) cfg.curriculum.ramp = c.at("ramp").get<double>();
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    return cfg;
}

static nlohmann::json vocab_to_json(const Vocab& v) {
    std::vector<uint32_t> cps;
    for (char32_t c : v.chars) cps.push_back(static_cast<uint32_t>(c));
    return cps;
}

static Vocab vocab_from_json(const nlohmann::json& j) {
    Vocab v;
    for (const auto& cp : j) v.chars.push_back(static_cast<char32_t>(cp.get<uint32_t>()));
    for (size_t i = 0; i + 1 < v.chars.size(); ++i)
        if (!(v.chars[i] < v.chars[i + 1]))
            throw ConfigError("checkpoint vocab is not sorted/distinct");
    for (size_t i = 0; i < v.chars.size(); ++i) v.id_of[v.chars[i]] = static_cast<int>(i);
    v.eos_id = static_cast<int>(v.chars.size());
    v.sos_id = v.eos_id + 1;
    return v;
}

void save_checkpoint(const TrainState& state, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());

    nlohmann::json tensors = nlohmann::json::array();
    size_t offset = 0;
    std::ofstream blob((fs::path(dir) / "model.bin").string(), std::ios::binary);
    if (!blob) throw IoError("cannot write " + dir + "/model.bin");
    visit_tensors(state.params, [&](const std::string& name, const auto& t) {
        tensors.push_back({{"name", name},
                           {"shape", {t.rows(), t.cols()}},
                           {"offset", offset}});
        blob.write(reinterpret_cast<const char*>(t.data()),
                   static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.size())));
        offset += sizeof(float) * static_cast<size_t>(t.size());
    });
    if (!blob) throw IoError("write failed for " + dir + "/model.bin");
    blob.close();

    const nlohmann::json manifest{{"format", kFormatTag},
                                  {"model", model_config_to_json(state.model_cfg)},
                                  {"vocab", vocab_to_json(state.vocab)},
                                  {"train", train_config_to_json(state.train_cfg)},
                                  {"step", state.step},
                                  {"blob_bytes", offset},
                                  {"tensors", tensors}};
    save_json_file((fs::path(dir) / "model.json").string(), manifest);
}

// Reads the blob into `params` following the manifest's tensor directory.
// Shapes are validated against the freshly allocated model tensors.
static void read_blob(const std::string& dir, const nlohmann::json& manifest, Params& params) {
    const std::string bin_path = (fs::path(dir) / "model.bin").string();
    std::ifstream blob(bin_path, std::ios::binary);
    if (!blob) throw IoError("cannot open " + bin_path);
    blob.seekg(0, std::ios::end);
    const auto actual_bytes = static_cast<size_t>(blob.tellg());
    const auto expect_bytes = manifest.at("blob_bytes").get<size_t>();
    if (actual_bytes != expect_bytes)
        throw IoError("corrupt blob: " + bin_path + " has " + std::to_string(actual_bytes) +
                      " bytes, manifest says " + std::to_string(expect_bytes));

    std::unordered_map<std::string, std::pair<std::array<long, 2>, size_t>> directory;
    for (const auto& t : manifest.at("tensors")) {
        check_keys(t, "tensor entry", {"name", "shape", "offset"});
        const auto& shape = t.at("shape");
        directory[t.at("name").get<std::string>()] = {
            {shape[0].get<long>(), shape[1].get<long>()}, t.at("offset").get<size_t>()};
    }

    size_t seen = 0;
    visit_tensors(params, [&](const std::string& name, auto& tnsr) {
        auto it = directory.find(name);
        if (it == directory.end())
            throw MismatchError("checkpoint is missing tensor \"" + name + "\"");
        const auto [shape, offset] = it->second;
        if (shape[0] != tnsr.rows() || shape[1] != tnsr.cols())
            throw MismatchError("tensor \"" + name + "\" has shape " + std::to_string(shape[0]) +
                                "x" + std::to_string(shape[1]) + ", expected " +
                                std::to_string(tnsr.rows()) + "x" + std::to_string(tnsr.cols()));
        const size_t bytes = sizeof(float) * static_cast<size_t>(tnsr.size());
        if (offset + bytes > actual_bytes)
            throw MismatchError("tensor \"" + name + "\" extends past the blob end");
        blob.seekg(static_cast<std::streamoff>(offset));
        blob.read(reinterpret_cast<char*>(tnsr.data()), static_cast<std::streamsize>(bytes));
        if (!blob) throw IoError("read failed for tensor \"" + name + "\"");
        seen += 1;
    });
    if (seen != directory.size())
        throw MismatchError("checkpoint has " + std::to_string(directory.size()) +
                            " tensors, model expects " + std::to_string(seen));
}

TrainState load_checkpoint(const std::string& dir) {
    const nlohmann::json manifest = load_json_file((fs::path(dir) / "model.json").string());
    check_keys(manifest, "checkpoint manifest",
               {"format", "model", "vocab", "train", "step", "blob_bytes", "tensors"});
    if (!manifest.contains("format") || manifest.at("format").get<std::string>() != kFormatTag)
        throw ConfigError("not a checkpoint manifest: " + dir);

    TrainState st;
    st.model_cfg = model_config_from_json(manifest.at("model"));
    st.model_cfg.validate();
    st.train_cfg = train_config_from_json(manifest.at("train"));
    st.vocab = vocab_from_json(manifest.at("vocab"));
    if (st.vocab.score_dim() != st.model_cfg.score_dim)
        throw MismatchError("checkpoint vocab size does not match the model score dimension");
    st.step = manifest.at("step").get<long>();
    st.params = init_params<float>(st.model_cfg, 0);
    read_blob(dir, manifest, st.params);
    return st;
}

void load_params_from(TrainState& state, const std::string& dir) {
    const TrainState other = load_checkpoint(dir);
    bool mismatch = false;
    std::string bad;
    std::vector<std::pair<std::string, std::pair<long, long>>> shapes;
    visit_tensors(other.params, [&](const std::string& name, const auto& t) {
        shapes.push_back({name, {t.rows(), t.cols()}});
    });
    size_t i = 0;
    visit_tensors(state.params, [&](const std::string& name, auto& t) {
        if (i >= shapes.size() || shapes[i].first != name ||
            shapes[i].second != std::make_pair(static_cast<long>(t.rows()), static_cast<long>(t.cols()))) {
            mismatch = true;
            if (bad.empty()) bad = name;
        }
        ++i;
    });
    if (mismatch || i != shapes.size())
        throw MismatchError("transfer init shape mismatch at tensor \"" + bad + "\"");

    std::vector<const float*> src;
    visit_tensors(other.params, [&](const std::string&, const auto& t) { src.push_back(t.data()); });
    size_t k = 0;
    visit_tensors(state.params, [&](const std::string&, auto& t) {
        std::copy(src[k], src[k] + t.size(), t.data());
        ++k;
    });
}

}  // namespace pagedec

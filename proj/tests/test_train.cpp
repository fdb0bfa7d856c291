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

#include "pagedec/decode.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace pagedec;

namespace {

ModelConfig small_config(int score_dim, int proj_heads) {
    ModelConfig cfg;
    cfg.channels = 16;
    cfg.layers = 1;
    cfg.attn_heads = 2;
    cfg.ffn_width = 16;
    cfg.proj_heads = proj_heads;
    cfg.score_dim = score_dim;
    cfg.dropout = 0.0f;
    return cfg;
}

GrayImage noise_image(int h, int w, uint64_t seed) {
    GrayImage img;
    img.h = h;
    img.w = w;
    img.px.resize(static_cast<size_t>(h) * w);
    RngStream rng(seed);
    for (auto& p : img.px) p = static_cast<uint8_t>(rng.next_below(256));
    return img;
}

// Plain next-token cross entropy, written independently of the windowed
// loss assembly: input <s> ++ y under a causal mask, head-0 scores against
// y ++ <e>, mean over positions.
double dan_loss_oracle(const ModelConfig& cfg, const Params& params, const Vocab& vocab,
                       const GrayImage& img, const TokenSeq& y) {
    TokenSeq input{vocab.sos_id};
    input.insert(input.end(), y.begin(), y.end());
    auto grid = encode_image<float>(cfg, params, img, nullptr);
    add_pe2d(grid);
    const Mat<float> q = embed_queries(cfg, params, input);
    const Mat<float> out = decoder_forward<float>(
        cfg, params, q, grid.values, causal_mask(static_cast<int>(input.size())), ForwardMode{},
        nullptr);
    const Mat<float> scores = project_heads(cfg, params, out, 1)[0];

    TokenSeq targets = y;
    targets.push_back(vocab.eos_id);
    double total = 0.0;
    for (Eigen::Index p = 0; p < scores.rows(); ++p) {
        const double mx = scores.row(p).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < scores.cols(); ++j)
            sum += std::exp(static_cast<double>(scores(p, j)) - mx);
        total += mx + std::log(sum) - static_cast<double>(scores(p, targets[static_cast<size_t>(p)]));
    }
    return total / static_cast<double>(scores.rows());
}

std::string temp_dir(const char* tag) {
    auto dir = std::filesystem::temp_directory_path() / ("pagedec_train_" + std::string(tag));
    std::filesystem::remove_all(dir);
    return dir.string();
}

Dataset tiny_dataset(const char* tag, int train_n = 6, int val_n = 2, int test_n = 2) {
    SynthConfig cfg;
    cfg.corpus = "on no not too tot";
    cfg.glyph_height = 7;
    cfg.min_lines = 1;
    cfg.max_lines = 2;
    cfg.max_chars_per_line = 8;
    cfg.noise = 4;
    cfg.seed = 9;
    const std::string dir = temp_dir(tag);
    make_dataset(cfg, {train_n, val_n, test_n}, dir);
    Dataset ds = load_dataset(dir);
    std::filesystem::remove_all(dir);
    return ds;
}

}  // namespace

TEST_CASE("windowed loss with w=1 m=1 equals the plain next-token loss") {
    const Vocab v = build_vocab({"abcd"});
    RngStream rng(55);
    for (int trial = 0; trial < 5; ++trial) {
        const ModelConfig cfg = small_config(v.score_dim(), 1);
        const Params params = init_params<float>(cfg, 100 + static_cast<uint64_t>(trial));
        const GrayImage img = noise_image(40, 32, 200 + static_cast<uint64_t>(trial));
        TokenSeq y;
        const size_t len = 1 + rng.next_below(20);
        for (size_t i = 0; i < len; ++i) y.push_back(static_cast<int>(rng.next_below(4)));

        const double a = loss_meta<float>(cfg, params, v, img, y, 1, 1, ForwardMode{}, nullptr);
        const double b = dan_loss_oracle(cfg, params, v, img, y);
        CHECK(std::abs(a - b) < 1e-6);
    }
}

TEST_CASE("initial loss of a fresh model is near ln|A|") {
    const Vocab v = build_vocab({"abc"});  // |A| = 4
    const ModelConfig cfg = small_config(v.score_dim(), 1);
    const Params params = init_params<float>(cfg, 3);
    const GrayImage img = noise_image(40, 32, 4);
    const TokenSeq y = encode_text(v, "abcabcab");
    const double loss = loss_meta<float>(cfg, params, v, img, y, 1, 1, ForwardMode{}, nullptr);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(0.04));
}

TEST_CASE("multi-head targets extend past the end with <e>") {
    const Vocab v = build_vocab({"ab"});
    const ModelConfig cfg = small_config(v.score_dim(), 3);
    const Params params = init_params<float>(cfg, 5);
    const GrayImage img = noise_image(32, 16, 6);
    const double loss =
        loss_meta<float>(cfg, params, v, img, encode_text(v, "ab"), 1, 3, ForwardMode{}, nullptr);
    CHECK(std::isfinite(loss));
    CHECK_THROWS_AS(
        loss_meta<float>(cfg, params, v, img, TokenSeq{}, 1, 1, ForwardMode{}, nullptr),
        ConfigError);
}

TEST_CASE("curriculum line budget") {
    Curriculum cur;
    cur.start_lines = 1;
    cur.end_lines = 8;
    cur.ramp = 0.5;
    CHECK(curriculum_lines(0, 1000, cur) == 1);
    CHECK(curriculum_lines(250, 1000, cur) == 5);  // 4.5 rounds half up
    CHECK(curriculum_lines(500, 1000, cur) == 8);
    CHECK(curriculum_lines(999, 1000, cur) == 8);
    cur.ramp = 0.0;
    CHECK(curriculum_lines(0, 1000, cur) == 8);
}

TEST_CASE("two-stage layout structure") {
    const Vocab v = build_vocab({"abc\n"});

    SUBCASE("single line adds the document and line terminals") {
        const auto lay = two_stage_layout(v, {"abc"});
        CHECK(lay.n_stage1 == 2);
        CHECK(lay.ids.size() == 2 + 3);
        CHECK(lay.targets.size() == lay.ids.size());
        // stage-1 targets: first char then <e>; stage-2: continuation + <e>
        CHECK(lay.targets[0] == v.id_of.at(U'a'));
        CHECK(lay.targets[1] == v.eos_id);
        CHECK(lay.targets[2] == v.id_of.at(U'b'));
        CHECK(lay.targets[3] == v.id_of.at(U'c'));
        CHECK(lay.targets[4] == v.eos_id);
    }
    SUBCASE("length-one lines only contribute terminal targets in stage 2") {
        const auto lay = two_stage_layout(v, {"a", "b"});
        CHECK(lay.n_stage1 == 3);
        CHECK(lay.ids.size() == 3 + 2);
        CHECK(lay.targets[3] == v.eos_id);
        CHECK(lay.targets[4] == v.eos_id);
    }
    SUBCASE("the first character is re-embedded with its line position") {
        const auto lay = two_stage_layout(v, {"ab", "ca"});
        // stage-1 positions are line 0; stage-2 duplicates start at offset 1
        CHECK(lay.line[1] == 0);
        CHECK(lay.line[3] == 1);
        CHECK(lay.offset[3] == 1);
        CHECK(lay.ids[3] == lay.ids[1]);  // same character token, different position
    }
    CHECK_THROWS_AS(two_stage_layout(v, {}), ConfigError);
    CHECK_THROWS_AS(two_stage_layout(v, {""}), ConfigError);
}

TEST_CASE("two-stage loss is finite and order-sensitive") {
    const Vocab v = build_vocab({"abc\n"});
    const ModelConfig cfg = small_config(v.score_dim(), 1);
    const Params params = init_params<float>(cfg, 8);
    const GrayImage img = noise_image(64, 32, 9);
    const double ab =
        loss_fasterdan<float>(cfg, params, v, img, {"ab", "ca"}, ForwardMode{}, nullptr);
    const double ba =
        loss_fasterdan<float>(cfg, params, v, img, {"ca", "ab"}, ForwardMode{}, nullptr);
    CHECK(std::isfinite(ab));
    CHECK(ab != ba);
}

TEST_CASE("reading order is part of the windowed loss too") {
    const Vocab v = build_vocab({"abc\n"});
    const ModelConfig cfg = small_config(v.score_dim(), 1);
    const Params params = init_params<float>(cfg, 10);
    const GrayImage img = noise_image(64, 32, 11);
    const double ab = loss_meta<float>(cfg, params, v, img, encode_text(v, "ab\nca"), 1, 1,
                                       ForwardMode{}, nullptr);
    const double ba = loss_meta<float>(cfg, params, v, img, encode_text(v, "ca\nab"), 1, 1,
                                       ForwardMode{}, nullptr);
    CHECK(ab != ba);
}

TEST_CASE("training steps are deterministic and honor the learning rate") {
    const Dataset ds = tiny_dataset("det");
    const Vocab v = vocab_for_dataset(ds);
    TrainConfig tc;
    tc.variant = Variant::Dan;
    tc.steps = 4;
    tc.batch = 2;
    tc.seed = 77;
    tc.curriculum.end_lines = 2;

    TrainState a = init_train_state(small_config(0, 1), tc, v);
    TrainState b = init_train_state(small_config(0, 1), tc, v);
    std::vector<const TrainSample*> batch{&ds.train[0], &ds.train[1]};
    const double la = train_step(a, batch);
    const double lb = train_step(b, batch);
    CHECK(la == lb);
    bool same = true;
    std::vector<const float*> pa, pb;
    visit_tensors(a.params, [&](const std::string&, const auto& t) { pa.push_back(t.data()); });
    visit_tensors(b.params, [&](const std::string&, const auto& t) { pb.push_back(t.data()); });
    size_t idx = 0;
    visit_tensors(a.params, [&](const std::string&, const auto& t) {
        same = same && std::equal(pa[idx], pa[idx] + t.size(), pb[idx]);
        ++idx;
    });
    CHECK(same);

    TrainConfig frozen = tc;
    frozen.lr = 0.0;
    TrainState c = init_train_state(small_config(0, 1), frozen, v);
    const Params before = c.params;
    train_step(c, batch);
    bool unchanged = true;
    std::vector<const float*> p0;
    visit_tensors(before, [&](const std::string&, const auto& t) { p0.push_back(t.data()); });
    idx = 0;
    visit_tensors(c.params, [&](const std::string&, const auto& t) {
        unchanged = unchanged && std::equal(p0[idx], p0[idx] + t.size(), t.data());
        ++idx;
    });
    CHECK(unchanged);
}

TEST_CASE("a single sample is overfit within fifty steps") {
    const Dataset ds = tiny_dataset("overfit", 3, 1, 1);
    const Vocab v = vocab_for_dataset(ds);
    TrainConfig tc;
    tc.variant = Variant::Dan;
    tc.steps = 50;
    tc.batch = 1;
    tc.lr = 3e-3;
    tc.seed = 5;
    tc.curriculum.end_lines = 2;
    TrainState st = init_train_state(small_config(0, 1), tc, v);
    std::vector<const TrainSample*> batch{&ds.train[0]};
    const double first = train_step(st, batch);
    double last = first;
    for (int i = 1; i < 50; ++i) last = train_step(st, batch);
    CHECK(last < first);
    CHECK(last < 0.7 * first);
}

TEST_CASE("divergence is reported with the step index") {
    const Dataset ds = tiny_dataset("div", 2, 1, 1);
    const Vocab v = vocab_for_dataset(ds);
    TrainConfig tc;
    tc.variant = Variant::Dan;
    tc.seed = 6;
    TrainState st = init_train_state(small_config(0, 1), tc, v);
    st.step = 13;
    st.params.embed(0, 0) = std::numeric_limits<float>::quiet_NaN();
    std::vector<const TrainSample*> batch{&ds.train[0]};
    CHECK_THROWS_WITH_AS(train_step(st, batch), "divergence at step 13", DivergenceError);
}

TEST_CASE("variant constraints are enforced") {
    TrainConfig tc;
    tc.variant = Variant::Dan;
    tc.w = 3;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = {};
    tc.variant = Variant::WDan;
    tc.w = 3;
    tc.m = 2;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = {};
    tc.variant = Variant::MtDan;
    tc.w = 2;
    tc.m = 2;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = {};
    tc.variant = Variant::Meta;
    tc.w = 5;
    tc.m = 5;
    CHECK_NOTHROW(tc.validate());
    CHECK(variant_from_name("fasterdan") == Variant::FasterDan);
    CHECK_THROWS_AS(variant_from_name("dna"), ConfigError);
}

TEST_CASE("checkpoints restore bit-identical parameters") {
    const Dataset ds = tiny_dataset("ckpt", 3, 1, 1);
    const Vocab v = vocab_for_dataset(ds);
    TrainConfig tc;
    tc.variant = Variant::Meta;
    tc.w = 2;
    tc.m = 2;
    tc.seed = 21;
    TrainState st = init_train_state(small_config(0, 2), tc, v);
    std::vector<const TrainSample*> batch{&ds.train[0], &ds.train[1]};
    for (int i = 0; i < 3; ++i) train_step(st, batch);

    const std::string dir = temp_dir("ckpt_out");
    save_checkpoint(st, dir);
    const TrainState back = load_checkpoint(dir);
    CHECK(back.step == st.step);
    CHECK(back.vocab.chars == st.vocab.chars);
    CHECK(back.train_cfg.w == 2);
    CHECK(back.model_cfg.channels == st.model_cfg.channels);

    std::vector<const float*> orig;
    visit_tensors(st.params, [&](const std::string&, const auto& t) { orig.push_back(t.data()); });
    size_t idx = 0;
    bool identical = true;
    visit_tensors(back.params, [&](const std::string&, const auto& t) {
        identical = identical && std::equal(orig[idx], orig[idx] + t.size(), t.data());
        ++idx;
    });
    CHECK(identical);

    // a decode after reload matches the decode before
    const GrayImage img = noise_image(48, 32, 50);
    DecodeCaps caps;
    caps.max_tokens = 30;
    caps.max_iterations = 30;
    const ModelRef m0{st.model_cfg, st.params, st.vocab};
    const ModelRef m1{back.model_cfg, back.params, back.vocab};
    CHECK(decode_dan(m0, img, caps).emitted == decode_dan(m1, img, caps).emitted);

    // corrupt blob length
    {
        std::ofstream trunc((std::filesystem::path(dir) / "model.bin").string(),
                            std::ios::binary | std::ios::trunc);
        trunc << "xx";
    }
    CHECK_THROWS_AS(load_checkpoint(dir), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("transfer init requires identical shapes") {
    const Dataset ds = tiny_dataset("tf", 3, 1, 1);
    const Vocab v = vocab_for_dataset(ds);
    TrainConfig mt;
    mt.variant = Variant::MtDan;
    mt.m = 2;
    mt.seed = 31;
    TrainState donor = init_train_state(small_config(0, 2), mt, v);
    const std::string dir = temp_dir("tf_out");
    save_checkpoint(donor, dir);

    // same shapes: a windowed run with the same head count accepts the donor
    TrainConfig meta = mt;
    meta.variant = Variant::Meta;
    meta.w = 3;
    TrainState target = init_train_state(small_config(0, 2), meta, v);
    CHECK_NOTHROW(load_params_from(target, dir));
    CHECK(target.params.embed == donor.params.embed);

    // different head count: shapes differ, loading must fail
    TrainConfig meta1 = meta;
    meta1.m = 1;
    TrainState narrow = init_train_state(small_config(0, 1), meta1, v);
    CHECK_THROWS_AS(load_params_from(narrow, dir), MismatchError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("teacher-forced logits match greedy-decode logits on the same prefix") {
    const Vocab v = build_vocab({"abc \n"});
    const ModelConfig cfg = small_config(v.score_dim(), 1);
    const Params params = init_params<float>(cfg, 17);
    const GrayImage img = noise_image(48, 40, 18);
    const ModelRef model{cfg, params, v};

    DecodeCaps caps;
    caps.max_tokens = 10;
    caps.max_iterations = 10;
    const DecodeTrace trace = decode_dan(model, img, caps);
    REQUIRE(trace.emitted.size() >= 3);
    const TokenSeq& y = trace.emitted;

    auto grid = encode_image<float>(cfg, params, img, nullptr);
    add_pe2d(grid);
    TokenSeq input{v.sos_id};
    input.insert(input.end(), y.begin(), y.end());
    const Mat<float> q = embed_queries(cfg, params, input);
    const Mat<float> full = decoder_forward<float>(
        cfg, params, q, grid.values, causal_mask(static_cast<int>(input.size())), ForwardMode{},
        nullptr);
    const Mat<float> tf_scores = project_heads(cfg, params, full, 1)[0];

    for (size_t t = 1; t <= y.size(); ++t) {
        const TokenSeq prefix(input.begin(), input.begin() + static_cast<long>(t));
        const Mat<float> qp = embed_queries(cfg, params, prefix);
        const Mat<float> out = decoder_forward<float>(
            cfg, params, qp, grid.values, causal_mask(static_cast<int>(t)), ForwardMode{}, nullptr);
        const Mat<float> step_scores = project_heads(cfg, params, out, 1)[0];
        const auto diff =
            (step_scores.row(out.rows() - 1) - tf_scores.row(static_cast<long>(t) - 1))
                .cwiseAbs()
                .maxCoeff();
        CHECK(diff < 1e-5f);
    }
}

TEST_CASE("train loop runs the curriculum and logs every step") {
    const Dataset ds = tiny_dataset("loop", 8, 1, 1);
    const Vocab v = vocab_for_dataset(ds);
    TrainConfig tc;
    tc.variant = Variant::Dan;
    tc.steps = 6;
    tc.batch = 2;
    tc.seed = 41;
    tc.curriculum.start_lines = 1;
    tc.curriculum.end_lines = 2;
    tc.curriculum.ramp = 0.5;
    TrainState st = init_train_state(small_config(0, 1), tc, v);
    std::vector<StepLog> logs;
    train_loop(st, ds, 6, [&](const StepLog& log) { logs.push_back(log); });
    CHECK(logs.size() == 6);
    CHECK(st.step == 6);
    CHECK(logs.front().lines_cap == 1);
    CHECK(logs.back().lines_cap == 2);
    for (const auto& log : logs) CHECK(std::isfinite(log.loss));
}

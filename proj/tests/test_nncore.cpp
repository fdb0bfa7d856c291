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

#include "pagedec/nncore.hpp"

#include "pagedec/train.hpp"

#include <doctest.h>

#include <set>

using namespace pagedec;

namespace {

GrayImage random_image(int h, int w, uint64_t seed) {
    GrayImage img;
    img.h = h;
    img.w = w;
    img.px.resize(static_cast<size_t>(h) * w);
    RngStream rng(seed);
    for (auto& p : img.px) p = static_cast<uint8_t>(rng.next_below(256));
    return img;
}

/// Small enough for finite differences: fewer than 2k parameters.
ModelConfig gradcheck_config(int score_dim, int proj_heads) {
    ModelConfig cfg;
    cfg.channels = 8;
    cfg.layers = 1;
    cfg.attn_heads = 2;
    cfg.ffn_width = 8;
    cfg.proj_heads = proj_heads;
    cfg.score_dim = score_dim;
    cfg.dropout = 0.0f;
    return cfg;
}

ModelConfig small_float_config(int score_dim) {
    ModelConfig cfg;
    cfg.channels = 16;
    cfg.layers = 2;
    cfg.attn_heads = 2;
    cfg.ffn_width = 32;
    cfg.proj_heads = 2;
    cfg.score_dim = score_dim;
    cfg.dropout = 0.0f;
    return cfg;
}

// Central finite differences against the analytic gradient for every tensor.
template <typename LossFn>
void check_gradients(const ModelConfig& cfg, ParamsT<double>& params, LossFn&& loss_fn) {
    ParamsT<double> grads = zeros_like(params);
    loss_fn(params, &grads);

    const double h = 1e-4;  // balances truncation against roundoff on small components
    std::vector<std::pair<std::string, double>> worst_per_tensor;
    visit_tensors(params, [&](const std::string& name, auto& tensor) {
        // locate the matching gradient tensor
        double* gdata = nullptr;
        visit_tensors(grads, [&](const std::string& gname, auto& gt) {
            if (gname == name) gdata = gt.data();
        });
        REQUIRE(gdata != nullptr);
        double worst = 0.0;
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
            const double saved = tensor.data()[i];
            tensor.data()[i] = saved + h;
            const double up = loss_fn(params, nullptr);
            tensor.data()[i] = saved - h;
            const double down = loss_fn(params, nullptr);
            tensor.data()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double an = gdata[i];
            // differences below the finite-difference noise floor carry no
            // signal regardless of the component's relative scale
            if (std::abs(fd - an) < 1e-9) continue;
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
            worst = std::max(worst, rel);
        }
        worst_per_tensor.push_back({name, worst});
    });
    for (const auto& [name, worst] : worst_per_tensor) {
        INFO("tensor ", name);
        CHECK(worst < 1e-4);
    }
}

}  // namespace

TEST_CASE("encoder output grid follows the stride contract") {
    const Vocab v = build_vocab({"abc"});
    ModelConfig cfg = small_float_config(v.score_dim());
    Params p = init_params<float>(cfg, 1);

    const auto g1 = encode_image<float>(cfg, p, random_image(64, 64, 1), nullptr);
    CHECK(g1.h == 2);
    CHECK(g1.w == 8);
    CHECK(g1.values.rows() == 16);
    CHECK(g1.values.cols() == cfg.channels);

    const auto g2 = encode_image<float>(cfg, p, random_image(32, 8, 2), nullptr);
    CHECK(g2.h == 1);
    CHECK(g2.w == 1);

    const auto g3 = encode_image<float>(cfg, p, random_image(33, 9, 3), nullptr);
    CHECK(g3.h == 2);
    CHECK(g3.w == 2);

    CHECK_THROWS_AS(encode_image<float>(cfg, p, random_image(31, 8, 4), nullptr), ConfigError);
    CHECK_THROWS_AS(encode_image<float>(cfg, p, random_image(32, 7, 5), nullptr), ConfigError);
}

TEST_CASE("positional encodings at the origin") {
    const auto v1 = pe1d<double>(0, 8);
    for (int i = 0; i < 8; i += 2) {
        CHECK(v1(i) == 0.0);      // sin 0
        CHECK(v1(i + 1) == 1.0);  // cos 0
    }
    const auto v2 = pe2d<double>(0, 0, 8);
    for (int i = 0; i < 8; i += 2) {
        CHECK(v2(i) == 0.0);
        CHECK(v2(i + 1) == 1.0);
    }
}

TEST_CASE("2-D encoding separates the axes") {
    const int C = 16;
    const auto a = pe2d<double>(3, 5, C);
    const auto b = pe2d<double>(3, 9, C);
    // height half does not depend on the column
    for (int i = 0; i < C / 2; ++i) CHECK(a(i) == b(i));
    CHECK(a.tail(C / 2) != b.tail(C / 2));
}

TEST_CASE("2-D encoding is injective on a 4x8 grid") {
    const int C = 16;
    std::set<std::vector<double>> seen;
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 8; ++x) {
            const auto v = pe2d<double>(y, x, C);
            std::vector<double> key(v.data(), v.data() + v.size());
            CHECK(seen.insert(key).second);
        }
    }
}

TEST_CASE("grid flattening is row-major") {
    FeatureGridT<float> grid;
    grid.h = 2;
    grid.w = 3;
    grid.values = Mat<float>::Zero(6, 8);
    add_pe2d(grid);
    // element (1, 0) lands at index W_f = 3
    CHECK(grid.values.row(3) == pe2d<float>(1, 0, 8).transpose());
    CHECK(flatten(grid).rows() == 6);
}

TEST_CASE("query embedding uses the start-token row and 1-D positions") {
    const Vocab v = build_vocab({"ab"});
    ModelConfig cfg = small_float_config(v.score_dim());
    Params p = init_params<float>(cfg, 2);

    const Mat<float> q = embed_queries(cfg, p, {v.sos_id, 0, 0});
    CHECK(q.row(0) == (p.embed.row(v.sos_id) + pe1d<float>(0, cfg.channels).transpose()));
    // same token at two positions embeds differently
    CHECK(q.row(1) != q.row(2));
    CHECK_THROWS_AS(embed_queries(cfg, p, {v.sos_id + 1}), MismatchError);
}

TEST_CASE("decoder is causal under the causal mask") {
    const Vocab v = build_vocab({"abc"});
    ModelConfig cfg = small_float_config(v.score_dim());
    Params p = init_params<float>(cfg, 3);
    const auto grid = [&] {
        auto g = encode_image<float>(cfg, p, random_image(40, 24, 7), nullptr);
        add_pe2d(g);
        return g;
    }();

    const TokenSeq ids{v.sos_id, 0, 1, 2, 0, 1};
    const Mat<float> q = embed_queries(cfg, p, ids);
    const Mat<float> full =
        decoder_forward<float>(cfg, p, q, grid.values, causal_mask(6), ForwardMode{}, nullptr);

    const TokenSeq prefix_ids(ids.begin(), ids.begin() + 4);
    const Mat<float> qp = embed_queries(cfg, p, prefix_ids);
    const Mat<float> pref =
        decoder_forward<float>(cfg, p, qp, grid.values, causal_mask(4), ForwardMode{}, nullptr);
    CHECK((full.topRows(4) - pref).cwiseAbs().maxCoeff() < 1e-6f);

    // changing a later query leaves earlier outputs untouched
    TokenSeq altered = ids;
    altered[5] = 2;
    const Mat<float> qa = embed_queries(cfg, p, altered);
    const Mat<float> alt =
        decoder_forward<float>(cfg, p, qa, grid.values, causal_mask(6), ForwardMode{}, nullptr);
    CHECK(full.topRows(5) == alt.topRows(5));
    CHECK(full.row(5) != alt.row(5));
}

TEST_CASE("windowed mask lets a block see its near future but not the next block") {
    const Vocab v = build_vocab({"abc"});
    ModelConfig cfg = small_float_config(v.score_dim());
    Params p = init_params<float>(cfg, 4);
    auto grid = encode_image<float>(cfg, p, random_image(40, 24, 8), nullptr);
    add_pe2d(grid);

    const AttentionMask mask = windowed_mask(6, 3);
    const TokenSeq base{v.sos_id, v.sos_id, v.sos_id, 0, 1, 2};
    const Mat<float> out0 = decoder_forward<float>(cfg, p, embed_queries(cfg, p, base),
                                                   grid.values, mask, ForwardMode{}, nullptr);

    TokenSeq same_block = base;
    same_block[2] = 1;  // position 2 shares block 0 with position 0
    const Mat<float> out1 = decoder_forward<float>(cfg, p, embed_queries(cfg, p, same_block),
                                                   grid.values, mask, ForwardMode{}, nullptr);
    CHECK(out0.row(0) != out1.row(0));

    TokenSeq next_block = base;
    next_block[3] = 2;  // position 3 is in block 1, invisible to block 0
    const Mat<float> out2 = decoder_forward<float>(cfg, p, embed_queries(cfg, p, next_block),
                                                   grid.values, mask, ForwardMode{}, nullptr);
    CHECK(out0.topRows(3) == out2.topRows(3));
}

TEST_CASE("evaluation forwards are bit-identical") {
    const Vocab v = build_vocab({"abc"});
    ModelConfig cfg = small_float_config(v.score_dim());
    Params p = init_params<float>(cfg, 5);
    auto grid = encode_image<float>(cfg, p, random_image(48, 32, 9), nullptr);
    add_pe2d(grid);
    const TokenSeq ids{v.sos_id, 0, 1, 2};
    const Mat<float> q = embed_queries(cfg, p, ids);
    const Mat<float> a =
        decoder_forward<float>(cfg, p, q, grid.values, causal_mask(4), ForwardMode{}, nullptr);
    const Mat<float> b =
        decoder_forward<float>(cfg, p, q, grid.values, causal_mask(4), ForwardMode{}, nullptr);
    CHECK(a == b);
}

TEST_CASE("score heads") {
    const Vocab v = build_vocab({"abc"});
    ModelConfig cfg = small_float_config(v.score_dim());
    Params p = init_params<float>(cfg, 6);

    Mat<float> zero = Mat<float>::Zero(3, cfg.channels);
    const auto scores = project_heads(cfg, p, zero, 2);
    CHECK(scores.size() == 2);
    CHECK(scores[0].isZero());  // zero outputs give zero scores, uniform softmax
    CHECK_THROWS_AS(project_heads(cfg, p, zero, 3), ConfigError);
    CHECK_THROWS_AS(project_heads(cfg, p, zero, 0), ConfigError);

    Mat<float> one = Mat<float>::Random(2, cfg.channels);
    const auto s1 = project_heads(cfg, p, one, 1);
    CHECK((s1[0] - one * p.proj[0].transpose()).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("analytic gradients match finite differences for the windowed loss") {
    const Vocab v = build_vocab({"abc"});
    ModelConfig cfg = gradcheck_config(v.score_dim(), 2);
    ParamsT<double> params = init_params<double>(cfg, 1234);
    CHECK(param_count(params) <= 2000);

    const GrayImage img = random_image(32, 16, 42);
    const TokenSeq y = encode_text(v, "abcab");
    auto loss_fn = [&](ParamsT<double>& p, ParamsT<double>* grads) {
        return loss_meta<double>(cfg, p, v, img, y, 2, 2, ForwardMode{}, grads);
    };
    check_gradients(cfg, params, loss_fn);
}

TEST_CASE("analytic gradients match finite differences for the two-stage loss") {
    const Vocab v = build_vocab({"abc\n"});
    ModelConfig cfg = gradcheck_config(v.score_dim(), 1);
    ParamsT<double> params = init_params<double>(cfg, 77);
    CHECK(param_count(params) <= 2000);

    const GrayImage img = random_image(32, 16, 43);
    const std::vector<std::string> lines{"ab", "ca"};
    auto loss_fn = [&](ParamsT<double>& p, ParamsT<double>* grads) {
        return loss_fasterdan<double>(cfg, p, v, img, lines, ForwardMode{}, grads);
    };
    check_gradients(cfg, params, loss_fn);
}

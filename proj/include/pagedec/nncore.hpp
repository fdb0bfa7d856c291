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

#include "pagedec/common.hpp"
#include "pagedec/masks.hpp"
#include "pagedec/textcodec.hpp"

#include <cmath>
#include <limits>

// Trainable model: strided convolutional encoder (/32 height, /8 width),
// additive sinusoidal positional encodings, a stack of pre-norm transformer
// decoder layers with masked self-attention and unmasked cross-attention,
// and m linear score heads. Everything is templated on the scalar type so
// the float path used for training and the double path used for finite-
// difference checks share one implementation. All backward passes are
// written out by hand; forwards fill activation caches the backwards consume.

namespace pagedec {

struct ModelConfig {
    int channels = 64;    // C_f, feature/embedding width
    int layers = 2;       // decoder depth
    int attn_heads = 4;   // attention heads per layer
    int ffn_width = 128;  // position-wise feedforward hidden size
    int proj_heads = 1;   // m, score heads
    int score_dim = 0;    // |A|, set from the vocab
    float dropout = 0.1f;

    // Encoder stage strides are fixed at (2,2),(2,2),(2,2),(2,1),(2,1);
    // per-stage output channels default to {C/8, C/4, C/2, C, C} floored at 2.
    std::vector<int> encoder_channels;

    std::vector<int> enc_channels() const {
        if (!encoder_channels.empty()) return encoder_channels;
        auto at_least = [](int v, int lo) { return v < lo ? lo : v; };
        return {at_least(channels / 8, 2), at_least(channels / 4, 2), at_least(channels / 2, 2),
                channels, channels};
    }
    void validate() const {
        if (channels < 2 || channels % 2 != 0) throw ConfigError("channels must be even and >= 2");
        if (attn_heads < 1 || channels % attn_heads != 0)
            throw ConfigError("channels must be divisible by attention head count");
        if (layers < 1) throw ConfigError("decoder needs at least one layer");
        if (ffn_width < 1) throw ConfigError("feedforward width must be >= 1");
        if (proj_heads < 1) throw ConfigError("need at least one score head");
        if (score_dim < 2) throw ConfigError("score dimension must be >= 2");
        if (enc_channels().size() != 5) throw ConfigError("encoder needs exactly 5 stages");
        if (dropout < 0.0f || dropout >= 1.0f) throw ConfigError("dropout must be in [0, 1)");
    }
};

inline constexpr int kEncoderStages = 5;
inline constexpr int kMinImageH = 32;
inline constexpr int kMinImageW = 8;
inline constexpr int kStrideY[kEncoderStages] = {2, 2, 2, 2, 2};
inline constexpr int kStrideX[kEncoderStages] = {2, 2, 2, 1, 1};

template <typename T>
struct LinearP {
    Mat<T> w;  // out x in
    Vec<T> b;
};
template <typename T>
struct NormP {
    Vec<T> g, b;
};
template <typename T>
struct ConvP {
    Mat<T> w;  // out_c x (in_c * 9), 3x3 kernels
    Vec<T> b;
};
template <typename T>
struct LayerP {
    NormP<T> n1;
    LinearP<T> q, k, v, o;
    NormP<T> n2;
    LinearP<T> cq, ck, cv, co;
    NormP<T> n3;
    LinearP<T> f1, f2;
};

template <typename T>
struct ParamsT {
    std::vector<ConvP<T>> enc;
    Mat<T> embed;  // (|A|+1) x C, last row is <s>
    std::vector<LayerP<T>> layers;
    NormP<T> norm_out;
    std::vector<Mat<T>> proj;  // m heads, each |A| x C, no bias
};

using Params = ParamsT<float>;

// Applies f(name, tensor) to every parameter tensor in a fixed order; the
// order defines the checkpoint layout and the optimizer state alignment.
template <typename P, typename F>
void visit_tensors(P& p, F&& f) {
    auto norm = [&](const std::string& prefix, auto& n) {
        f(prefix + ".g", n.g);
        f(prefix + ".b", n.b);
    };
    auto linear = [&](const std::string& prefix, auto& l) {
        f(prefix + ".w", l.w);
        f(prefix + ".b", l.b);
    };
    for (size_t i = 0; i < p.enc.size(); ++i) {
        const std::string s = "enc" + std::to_string(i);
        f(s + ".w", p.enc[i].w);
        f(s + ".b", p.enc[i].b);
    }
    f("embed", p.embed);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const std::string s = "layer" + std::to_string(l);
        auto& L = p.layers[l];
        norm(s + ".n1", L.n1);
        linear(s + ".q", L.q);
        linear(s + ".k", L.k);
        linear(s + ".v", L.v);
        linear(s + ".o", L.o);
        norm(s + ".n2", L.n2);
        linear(s + ".cq", L.cq);
        linear(s + ".ck", L.ck);
        linear(s + ".cv", L.cv);
        linear(s + ".co", L.co);
        norm(s + ".n3", L.n3);
        linear(s + ".f1", L.f1);
        linear(s + ".f2", L.f2);
    }
    norm(std::string("norm_out"), p.norm_out);
    for (size_t k = 0; k < p.proj.size(); ++k) f("proj" + std::to_string(k) + ".w", p.proj[k]);
}

template <typename T>
size_t param_count(const ParamsT<T>& p) {
    size_t n = 0;
    visit_tensors(p, [&](const std::string&, const auto& t) { n += static_cast<size_t>(t.size()); });
    return n;
}

template <typename T>
ParamsT<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    RngStream rng(seed);
    auto xavier = [&](Mat<T>& w, int rows, int cols, double fan_in, double fan_out) {
        w.resize(rows, cols);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.data()[i] = static_cast<T>(rng.next_range(-limit, limit));
    };
    auto linear = [&](LinearP<T>& l, int out, int in) {
        xavier(l.w, out, in, in, out);
        l.b = Vec<T>::Zero(out);
    };
    auto norm = [&](NormP<T>& n, int dim) {
        n.g = Vec<T>::Constant(dim, T(1));
        n.b = Vec<T>::Zero(dim);
    };

    ParamsT<T> p;
    const auto ch = cfg.enc_channels();
    int in_c = 1;
    for (int s = 0; s < kEncoderStages; ++s) {
        ConvP<T> c;
        xavier(c.w, ch[static_cast<size_t>(s)], in_c * 9, in_c * 9.0, ch[static_cast<size_t>(s)] * 9.0);
        c.b = Vec<T>::Zero(ch[static_cast<size_t>(s)]);
        p.enc.push_back(std::move(c));
        in_c = ch[static_cast<size_t>(s)];
    }
    p.embed.resize(cfg.score_dim + 1, cfg.channels);
    for (Eigen::Index i = 0; i < p.embed.size(); ++i)
        p.embed.data()[i] = static_cast<T>(0.02 * rng.next_gauss());
    for (int l = 0; l < cfg.layers; ++l) {
        LayerP<T> L;
        norm(L.n1, cfg.channels);
        linear(L.q, cfg.channels, cfg.channels);
        linear(L.k, cfg.channels, cfg.channels);
        linear(L.v, cfg.channels, cfg.channels);
        linear(L.o, cfg.channels, cfg.channels);
        norm(L.n2, cfg.channels);
        linear(L.cq, cfg.channels, cfg.channels);
        linear(L.ck, cfg.channels, cfg.channels);
        linear(L.cv, cfg.channels, cfg.channels);
        linear(L.co, cfg.channels, cfg.channels);
        norm(L.n3, cfg.channels);
        linear(L.f1, cfg.ffn_width, cfg.channels);
        linear(L.f2, cfg.channels, cfg.ffn_width);
        p.layers.push_back(std::move(L));
    }
    norm(p.norm_out, cfg.channels);
    // score heads start small so the initial prediction is near uniform
    for (int k = 0; k < cfg.proj_heads; ++k) {
        Mat<T> w(cfg.score_dim, cfg.channels);
        const double limit = 0.5 / std::sqrt(static_cast<double>(cfg.channels));
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.data()[i] = static_cast<T>(rng.next_range(-limit, limit));
        p.proj.push_back(std::move(w));
    }
    return p;
}

/// Same shapes as `like`, all zeros. Gradient accumulators start here.
template <typename T>
ParamsT<T> zeros_like(const ParamsT<T>& like) {
    ParamsT<T> g = like;
    visit_tensors(g, [](const std::string&, auto& t) { t.setZero(); });
    return g;
}

// ---------------------------------------------------------------------------
// positional encodings

/// Interleaved sin/cos of `pos` over `dim` channels, wavelengths geometric in
/// base 10000, written to out[0..dim).
template <typename T>
void pe_fill(T* out, int dim, double pos) {
    for (int i = 0; i + 1 < dim; i += 2) {
        const double freq = std::pow(10000.0, static_cast<double>(i) / dim);
        out[i] = static_cast<T>(std::sin(pos / freq));
        out[i + 1] = static_cast<T>(std::cos(pos / freq));
    }
    if (dim % 2 != 0) {
        const double freq = std::pow(10000.0, static_cast<double>(dim - 1) / dim);
        out[dim - 1] = static_cast<T>(std::sin(pos / freq));
    }
}

template <typename T>
Vec<T> pe1d(int pos, int dim) {
    Vec<T> v(dim);
    pe_fill(v.data(), dim, static_cast<double>(pos));
    return v;
}

/// Row index over channels [0, C/2), column index over [C/2, C).
template <typename T>
Vec<T> pe2d(int row, int col, int dim) {
    Vec<T> v(dim);
    pe_fill(v.data(), dim / 2, static_cast<double>(row));
    pe_fill(v.data() + dim / 2, dim - dim / 2, static_cast<double>(col));
    return v;
}

// ---------------------------------------------------------------------------
// encoder

template <typename T>
struct FeatureGridT {
    int h = 0, w = 0;
    Mat<T> values;  // (h*w) x C, row-major over (row, col)
};

/// Pixels mapped to [-1, 1] with ink (0) positive.
template <typename T>
Mat<T> image_to_input(const GrayImage& img) {
    Mat<T> x(static_cast<Eigen::Index>(img.h) * img.w, 1);
    for (size_t i = 0; i < img.px.size(); ++i)
        x(static_cast<Eigen::Index>(i), 0) = static_cast<T>((127.5 - img.px[i]) / 127.5);
    return x;
}

template <typename T>
struct EncoderActs {
    std::vector<Mat<T>> col;  // im2col patches per stage
    std::vector<Mat<T>> pre;  // pre-activation outputs per stage
    std::vector<int> hs, ws;  // spatial dims per stage, index 0 = input
};

namespace detail {

template <typename T>
Mat<T> im2col3x3(const Mat<T>& x, int h, int w, int c, int sy, int sx, int h2, int w2) {
    Mat<T> col = Mat<T>::Zero(static_cast<Eigen::Index>(h2) * w2, static_cast<Eigen::Index>(c) * 9);
    for (int oy = 0; oy < h2; ++oy) {
        for (int ox = 0; ox < w2; ++ox) {
            const Eigen::Index r = static_cast<Eigen::Index>(oy) * w2 + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * sy + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * sx + kx - 1;
                    if (ix < 0 || ix >= w) continue;
                    const Eigen::Index src = static_cast<Eigen::Index>(iy) * w + ix;
                    for (int ci = 0; ci < c; ++ci)
                        col(r, static_cast<Eigen::Index>(ci) * 9 + ky * 3 + kx) = x(src, ci);
                }
            }
        }
    }
    return col;
}

template <typename T>
void col2im3x3(const Mat<T>& dcol, int h, int w, int c, int sy, int sx, int h2, int w2,
               Mat<T>& dx) {
    for (int oy = 0; oy < h2; ++oy) {
        for (int ox = 0; ox < w2; ++ox) {
            const Eigen::Index r = static_cast<Eigen::Index>(oy) * w2 + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * sy + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * sx + kx - 1;
                    if (ix < 0 || ix >= w) continue;
                    const Eigen::Index src = static_cast<Eigen::Index>(iy) * w + ix;
                    for (int ci = 0; ci < c; ++ci)
                        dx(src, ci) += dcol(r, static_cast<Eigen::Index>(ci) * 9 + ky * 3 + kx);
                }
            }
        }
    }
}

}  // namespace detail

/// Five strided 3x3 conv + ReLU stages with total stride (32, 8), so the
/// output grid is ceil(H/32) x ceil(W/8) x C. Images below 32x8 are rejected.
template <typename T>
FeatureGridT<T> encode_image(const ModelConfig& cfg, const ParamsT<T>& p, const GrayImage& img,
                             EncoderActs<T>* acts) {
    if (img.h < kMinImageH || img.w < kMinImageW)
        throw ConfigError("image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                          " too small; minimum is " + std::to_string(kMinImageH) + "x" +
                          std::to_string(kMinImageW));
    const auto ch = cfg.enc_channels();
    Mat<T> x = image_to_input<T>(img);
    int h = img.h, w = img.w, c = 1;
    if (acts) {
        acts->col.clear();
        acts->pre.clear();
        acts->hs = {h};
        acts->ws = {w};
    }
    for (int s = 0; s < kEncoderStages; ++s) {
        const int sy = kStrideY[s], sx = kStrideX[s];
        const int h2 = (h - 1) / sy + 1, w2 = (w - 1) / sx + 1;
        Mat<T> col = detail::im2col3x3(x, h, w, c, sy, sx, h2, w2);
        Mat<T> pre(col.rows(), ch[static_cast<size_t>(s)]);
        pre.noalias() = col * p.enc[static_cast<size_t>(s)].w.transpose();
        pre.rowwise() += p.enc[static_cast<size_t>(s)].b.transpose();
        x = pre.cwiseMax(T(0));
        if (acts) {
            acts->col.push_back(std::move(col));
            acts->pre.push_back(std::move(pre));
            acts->hs.push_back(h2);
            acts->ws.push_back(w2);
        }
        h = h2;
        w = w2;
        c = ch[static_cast<size_t>(s)];
    }
    FeatureGridT<T> grid;
    grid.h = h;
    grid.w = w;
    grid.values = std::move(x);
    return grid;
}

template <typename T>
void encoder_backward(const ModelConfig& cfg, const ParamsT<T>& p, const EncoderActs<T>& acts,
                      const Mat<T>& dgrid, ParamsT<T>& grads) {
    const auto ch = cfg.enc_channels();
    Mat<T> dout = dgrid;
    for (int s = kEncoderStages - 1; s >= 0; --s) {
        const auto& pre = acts.pre[static_cast<size_t>(s)];
        Mat<T> dpre = ((pre.array() > T(0)).template cast<T>() * dout.array()).matrix();
        grads.enc[static_cast<size_t>(s)].w.noalias() +=
            dpre.transpose() * acts.col[static_cast<size_t>(s)];
        grads.enc[static_cast<size_t>(s)].b += dpre.colwise().sum().transpose();
        if (s == 0) break;  // gradient w.r.t. raw pixels is not needed
        Mat<T> dcol(acts.col[static_cast<size_t>(s)].rows(), acts.col[static_cast<size_t>(s)].cols());
        dcol.noalias() = dpre * p.enc[static_cast<size_t>(s)].w;
        const int h = acts.hs[static_cast<size_t>(s)], w = acts.ws[static_cast<size_t>(s)];
        const int h2 = acts.hs[static_cast<size_t>(s) + 1], w2 = acts.ws[static_cast<size_t>(s) + 1];
        dout = Mat<T>::Zero(static_cast<Eigen::Index>(h) * w, ch[static_cast<size_t>(s - 1)]);
        detail::col2im3x3(dcol, h, w, ch[static_cast<size_t>(s - 1)], kStrideY[s], kStrideX[s], h2,
                          w2, dout);
    }
}

/// Row-major memory sequence view of the grid: element (r, c) is row r*W + c.
template <typename T>
const Mat<T>& flatten(const FeatureGridT<T>& grid) {
    return grid.values;
}

template <typename T>
void add_pe2d(FeatureGridT<T>& grid) {
    const int dim = static_cast<int>(grid.values.cols());
    for (int y = 0; y < grid.h; ++y) {
        for (int x = 0; x < grid.w; ++x)
            grid.values.row(static_cast<Eigen::Index>(y) * grid.w + x) +=
                pe2d<T>(y, x, dim).transpose();
    }
}

// ---------------------------------------------------------------------------
// queries

template <typename T>
Mat<T> embed_queries(const ModelConfig& cfg, const ParamsT<T>& p, const TokenSeq& ids) {
    Mat<T> q(static_cast<Eigen::Index>(ids.size()), cfg.channels);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] > cfg.score_dim)
            throw MismatchError("token id " + std::to_string(ids[i]) + " out of embedding range");
        q.row(static_cast<Eigen::Index>(i)) =
            p.embed.row(ids[i]) + pe1d<T>(static_cast<int>(i), cfg.channels).transpose();
    }
    return q;
}

/// Two-stage variant: position is (line index, in-line offset), each encoded
/// over half the channels.
template <typename T>
Mat<T> embed_queries_dual(const ModelConfig& cfg, const ParamsT<T>& p, const TokenSeq& ids,
                          const std::vector<int>& line, const std::vector<int>& offset) {
    if (line.size() != ids.size() || offset.size() != ids.size())
        throw ConfigError("dual positional encoding needs one (line, offset) pair per token");
    Mat<T> q(static_cast<Eigen::Index>(ids.size()), cfg.channels);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] > cfg.score_dim)
            throw MismatchError("token id " + std::to_string(ids[i]) + " out of embedding range");
        q.row(static_cast<Eigen::Index>(i)) =
            p.embed.row(ids[i]) + pe2d<T>(line[i], offset[i], cfg.channels).transpose();
    }
    return q;
}

template <typename T>
void embed_backward(const TokenSeq& ids, const Mat<T>& dq, ParamsT<T>& grads) {
    for (size_t i = 0; i < ids.size(); ++i)
        grads.embed.row(ids[i]) += dq.row(static_cast<Eigen::Index>(i));
}

// ---------------------------------------------------------------------------
// decoder

template <typename T>
struct NormActs {
    Mat<T> xhat;      // normalized input (pre-gain)
    Vec<T> inv_std;   // per row
};

template <typename T>
struct AttnActs {
    NormActs<T> norm;
    Mat<T> Q, K, V;          // T x C (K, V over memory rows for cross)
    std::vector<Mat<T>> P;   // per head attention probabilities
    Mat<T> Z;                // concatenated head outputs, pre o-projection
    Mat<T> drop;             // dropout keep mask (empty in eval mode)
};

template <typename T>
struct FfnActs {
    NormActs<T> norm;
    Mat<T> h_pre;  // pre-ReLU hidden
    Mat<T> drop;
};

template <typename T>
struct LayerActs {
    AttnActs<T> self_attn, cross_attn;
    FfnActs<T> ffn;
};

template <typename T>
struct DecoderActs {
    std::vector<LayerActs<T>> layers;
    NormActs<T> out_norm;
};

struct ForwardMode {
    bool train = false;
    uint64_t dropout_seed = 0;
};

namespace detail {

template <typename T>
Mat<T> layer_norm(const NormP<T>& n, const Mat<T>& x, NormActs<T>& acts) {
    const auto C = x.cols();
    acts.xhat.resize(x.rows(), C);
    acts.inv_std.resize(x.rows());
    const T eps = T(1e-5);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T mu = x.row(r).mean();
        const T var = (x.row(r).array() - mu).square().sum() / static_cast<T>(C);
        const T inv = T(1) / std::sqrt(var + eps);
        acts.inv_std(r) = inv;
        acts.xhat.row(r) = (x.row(r).array() - mu) * inv;
    }
    Mat<T> y = acts.xhat;
    y.array().rowwise() *= n.g.transpose().array();
    y.rowwise() += n.b.transpose();
    return y;
}

template <typename T>
Mat<T> layer_norm_backward(const NormP<T>& n, const NormActs<T>& acts, const Mat<T>& dy,
                           NormP<T>& gn) {
    const auto C = acts.xhat.cols();
    gn.g += (dy.array() * acts.xhat.array()).colwise().sum().matrix().transpose();
    gn.b += dy.colwise().sum().transpose();
    Mat<T> dx(dy.rows(), C);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const auto dxhat = (dy.row(r).array() * n.g.transpose().array()).eval();
        const T m1 = dxhat.mean();
        const T m2 = (dxhat * acts.xhat.row(r).array()).mean();
        dx.row(r) = ((dxhat - m1 - acts.xhat.row(r).array() * m2) * acts.inv_std(r)).matrix();
    }
    return dx;
}

template <typename T>
Mat<T> linear_fwd(const LinearP<T>& l, const Mat<T>& x) {
    Mat<T> y(x.rows(), l.w.rows());
    y.noalias() = x * l.w.transpose();
    y.rowwise() += l.b.transpose();
    return y;
}

template <typename T>
Mat<T> linear_bwd(const LinearP<T>& l, const Mat<T>& x, const Mat<T>& dy, LinearP<T>& gl) {
    gl.w.noalias() += dy.transpose() * x;
    gl.b += dy.colwise().sum().transpose();
    Mat<T> dx(x.rows(), x.cols());
    dx.noalias() = dy * l.w;
    return dx;
}

template <typename T>
void dropout_fwd(const ModelConfig& cfg, const ForwardMode& mode, uint64_t salt, Mat<T>& x,
                 Mat<T>& mask) {
    if (!mode.train || cfg.dropout <= 0.0f) {
        mask.resize(0, 0);
        return;
    }
    RngStream rng(splitmix64(mode.dropout_seed) ^ salt);
    mask.resize(x.rows(), x.cols());
    const T scale = T(1) / (T(1) - static_cast<T>(cfg.dropout));
    for (Eigen::Index i = 0; i < mask.size(); ++i)
        mask.data()[i] = rng.next_unit() < cfg.dropout ? T(0) : scale;
    x.array() *= mask.array();
}

// Multi-head attention core. `mask` may be null (cross-attention sees the
// whole memory). Mask semantics: additive -inf on forbidden pairs after the
// query-key product, before normalization.
template <typename T>
Mat<T> attention_fwd(const ModelConfig& cfg, const Mat<T>& Q, const Mat<T>& K, const Mat<T>& V,
                     const AttentionMask* mask, std::vector<Mat<T>>& P_out) {
    const int H = cfg.attn_heads;
    const int dk = cfg.channels / H;
    const T alpha = T(1) / std::sqrt(static_cast<T>(dk));
    const T neg_inf = -std::numeric_limits<T>::infinity();
    const Eigen::Index Tq = Q.rows(), Tk = K.rows();
    Mat<T> Z(Tq, cfg.channels);
    P_out.assign(static_cast<size_t>(H), Mat<T>());
    for (int h = 0; h < H; ++h) {
        auto Qh = Q.middleCols(static_cast<Eigen::Index>(h) * dk, dk);
        auto Kh = K.middleCols(static_cast<Eigen::Index>(h) * dk, dk);
        auto Vh = V.middleCols(static_cast<Eigen::Index>(h) * dk, dk);
        Mat<T> S(Tq, Tk);
        S.noalias() = Qh * Kh.transpose();
        S *= alpha;
        if (mask) {
            for (Eigen::Index i = 0; i < Tq; ++i)
                for (Eigen::Index j = 0; j < Tk; ++j)
                    if (!mask->allowed(static_cast<int>(i), static_cast<int>(j))) S(i, j) = neg_inf;
        }
        Mat<T>& P = P_out[static_cast<size_t>(h)];
        P.resize(Tq, Tk);
        for (Eigen::Index i = 0; i < Tq; ++i) {
            const T mx = S.row(i).maxCoeff();
            P.row(i) = (S.row(i).array() - mx).exp().matrix();
            P.row(i) /= P.row(i).sum();
        }
        Z.middleCols(static_cast<Eigen::Index>(h) * dk, dk).noalias() = P * Vh;
    }
    return Z;
}

template <typename T>
void attention_bwd(const ModelConfig& cfg, const Mat<T>& Q, const Mat<T>& K, const Mat<T>& V,
                   const std::vector<Mat<T>>& P, const Mat<T>& dZ, Mat<T>& dQ, Mat<T>& dK,
                   Mat<T>& dV) {
    const int H = cfg.attn_heads;
    const int dk = cfg.channels / H;
    const T alpha = T(1) / std::sqrt(static_cast<T>(dk));
    dQ.setZero(Q.rows(), Q.cols());
    dK.setZero(K.rows(), K.cols());
    dV.setZero(V.rows(), V.cols());
    for (int h = 0; h < H; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
        auto Qh = Q.middleCols(c0, dk);
        auto Kh = K.middleCols(c0, dk);
        auto Vh = V.middleCols(c0, dk);
        auto dZh = dZ.middleCols(c0, dk);
        const Mat<T>& Ph = P[static_cast<size_t>(h)];
        Mat<T> dP(Ph.rows(), Ph.cols());
        dP.noalias() = dZh * Vh.transpose();
        dV.middleCols(c0, dk).noalias() = Ph.transpose() * dZh;
        // softmax rows: dS = P o (dP - rowsum(dP o P))
        Mat<T> dS = dP;
        for (Eigen::Index i = 0; i < Ph.rows(); ++i) {
            const T dot = (dP.row(i).array() * Ph.row(i).array()).sum();
            dS.row(i) = (Ph.row(i).array() * (dP.row(i).array() - dot)).matrix();
        }
        dS *= alpha;
        dQ.middleCols(c0, dk).noalias() = dS * Kh;
        dK.middleCols(c0, dk).noalias() = dS.transpose() * Qh;
    }
}

}  // namespace detail

/// Pre-norm decoder stack: masked self-attention, unmasked cross-attention
/// over the flattened image features, position-wise feedforward, residual
/// connections, final layer norm. Deterministic when mode.train is false.
template <typename T>
Mat<T> decoder_forward(const ModelConfig& cfg, const ParamsT<T>& p, const Mat<T>& q,
                       const Mat<T>& memory, const AttentionMask& mask, const ForwardMode& mode,
                       DecoderActs<T>* acts) {
    if (mask.size != static_cast<int>(q.rows()))
        throw ConfigError("self mask is " + std::to_string(mask.size) + "x" +
                          std::to_string(mask.size) + " but query length is " +
                          std::to_string(q.rows()));
    if (memory.rows() == 0) throw ConfigError("memory must be nonempty");
    DecoderActs<T> local;
    DecoderActs<T>& a = acts ? *acts : local;
    a.layers.assign(static_cast<size_t>(cfg.layers), LayerActs<T>{});

    Mat<T> x = q;
    uint64_t salt = 1;
    for (int l = 0; l < cfg.layers; ++l) {
        auto& L = p.layers[static_cast<size_t>(l)];
        auto& la = a.layers[static_cast<size_t>(l)];

        Mat<T> an = detail::layer_norm(L.n1, x, la.self_attn.norm);
        la.self_attn.Q = detail::linear_fwd(L.q, an);
        la.self_attn.K = detail::linear_fwd(L.k, an);
        la.self_attn.V = detail::linear_fwd(L.v, an);
        la.self_attn.Z = detail::attention_fwd(cfg, la.self_attn.Q, la.self_attn.K,
                                               la.self_attn.V, &mask, la.self_attn.P);
        Mat<T> so = detail::linear_fwd(L.o, la.self_attn.Z);
        detail::dropout_fwd(cfg, mode, salt++, so, la.self_attn.drop);
        x += so;

        Mat<T> bn = detail::layer_norm(L.n2, x, la.cross_attn.norm);
        la.cross_attn.Q = detail::linear_fwd(L.cq, bn);
        la.cross_attn.K = detail::linear_fwd(L.ck, memory);
        la.cross_attn.V = detail::linear_fwd(L.cv, memory);
        la.cross_attn.Z = detail::attention_fwd(cfg, la.cross_attn.Q, la.cross_attn.K,
                                                la.cross_attn.V, nullptr, la.cross_attn.P);
        Mat<T> co = detail::linear_fwd(L.co, la.cross_attn.Z);
        detail::dropout_fwd(cfg, mode, salt++, co, la.cross_attn.drop);
        x += co;

        Mat<T> cn = detail::layer_norm(L.n3, x, la.ffn.norm);
        la.ffn.h_pre = detail::linear_fwd(L.f1, cn);
        Mat<T> hidden = la.ffn.h_pre.cwiseMax(T(0));
        Mat<T> fo = detail::linear_fwd(L.f2, hidden);
        detail::dropout_fwd(cfg, mode, salt++, fo, la.ffn.drop);
        x += fo;
    }
    return detail::layer_norm(p.norm_out, x, a.out_norm);
}

template <typename T>
void decoder_backward(const ModelConfig& cfg, const ParamsT<T>& p, const Mat<T>& memory,
                      const DecoderActs<T>& a, const Mat<T>& dout, ParamsT<T>& grads, Mat<T>& dq,
                      Mat<T>& dmemory) {
    auto norm_in = [](const NormP<T>& n, const NormActs<T>& na) {
        Mat<T> y = na.xhat;
        y.array().rowwise() *= n.g.transpose().array();
        y.rowwise() += n.b.transpose();
        return y;
    };
    auto drop_bwd = [](const Mat<T>& mask, Mat<T>& d) {
        if (mask.size() != 0) d.array() *= mask.array();
    };

    dmemory = Mat<T>::Zero(memory.rows(), memory.cols());
    Mat<T> dx = detail::layer_norm_backward(p.norm_out, a.out_norm, dout, grads.norm_out);

    for (int l = cfg.layers - 1; l >= 0; --l) {
        auto& L = p.layers[static_cast<size_t>(l)];
        auto& gl = grads.layers[static_cast<size_t>(l)];
        const auto& la = a.layers[static_cast<size_t>(l)];

        // feedforward
        {
            Mat<T> dfo = dx;
            drop_bwd(la.ffn.drop, dfo);
            const Mat<T> cn = norm_in(L.n3, la.ffn.norm);
            Mat<T> hidden = la.ffn.h_pre.cwiseMax(T(0));
            Mat<T> dhidden = detail::linear_bwd(L.f2, hidden, dfo, gl.f2);
            Mat<T> dhpre =
                ((la.ffn.h_pre.array() > T(0)).template cast<T>() * dhidden.array()).matrix();
            Mat<T> dcn = detail::linear_bwd(L.f1, cn, dhpre, gl.f1);
            dx += detail::layer_norm_backward(L.n3, la.ffn.norm, dcn, gl.n3);
        }

        // cross-attention
        {
            Mat<T> dco = dx;
            drop_bwd(la.cross_attn.drop, dco);
            Mat<T> dZ = detail::linear_bwd(L.co, la.cross_attn.Z, dco, gl.co);
            Mat<T> dQ, dK, dV;
            detail::attention_bwd(cfg, la.cross_attn.Q, la.cross_attn.K, la.cross_attn.V,
                                  la.cross_attn.P, dZ, dQ, dK, dV);
            const Mat<T> bn = norm_in(L.n2, la.cross_attn.norm);
            Mat<T> dbn = detail::linear_bwd(L.cq, bn, dQ, gl.cq);
            dmemory += detail::linear_bwd(L.ck, memory, dK, gl.ck);
            dmemory += detail::linear_bwd(L.cv, memory, dV, gl.cv);
            dx += detail::layer_norm_backward(L.n2, la.cross_attn.norm, dbn, gl.n2);
        }

        // masked self-attention
        {
            Mat<T> dso = dx;
            drop_bwd(la.self_attn.drop, dso);
            Mat<T> dZ = detail::linear_bwd(L.o, la.self_attn.Z, dso, gl.o);
            Mat<T> dQ, dK, dV;
            detail::attention_bwd(cfg, la.self_attn.Q, la.self_attn.K, la.self_attn.V,
                                  la.self_attn.P, dZ, dQ, dK, dV);
            const Mat<T> an = norm_in(L.n1, la.self_attn.norm);
            Mat<T> dan = detail::linear_bwd(L.q, an, dQ, gl.q);
            dan += detail::linear_bwd(L.k, an, dK, gl.k);
            dan += detail::linear_bwd(L.v, an, dV, gl.v);
            dx += detail::layer_norm_backward(L.n1, la.self_attn.norm, dan, gl.n1);
        }
    }
    dq = std::move(dx);
}

// ---------------------------------------------------------------------------
// score heads

/// Scores of the first `heads_used` projection heads, one T x |A| matrix per
/// head; head 0 is the next-token head shared by all single-token paths.
template <typename T>
std::vector<Mat<T>> project_heads(const ModelConfig& cfg, const ParamsT<T>& p, const Mat<T>& out,
                                  int heads_used) {
    if (heads_used < 1 || heads_used > cfg.proj_heads)
        throw ConfigError("heads_used must be in [1, " + std::to_string(cfg.proj_heads) + "]");
    std::vector<Mat<T>> scores(static_cast<size_t>(heads_used));
    for (int k = 0; k < heads_used; ++k) {
        scores[static_cast<size_t>(k)].resize(out.rows(), cfg.score_dim);
        scores[static_cast<size_t>(k)].noalias() = out * p.proj[static_cast<size_t>(k)].transpose();
    }
    return scores;
}

template <typename T>
void project_heads_backward(const ParamsT<T>& p, const Mat<T>& out,
                            const std::vector<Mat<T>>& dscores, ParamsT<T>& grads, Mat<T>& dout) {
    dout = Mat<T>::Zero(out.rows(), out.cols());
    for (size_t k = 0; k < dscores.size(); ++k) {
        grads.proj[k].noalias() += dscores[k].transpose() * out;
        dout.noalias() += dscores[k] * p.proj[k];
    }
}

}  // namespace pagedec

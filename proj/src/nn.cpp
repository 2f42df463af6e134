#include "latemu/nn.hpp"

#include <cmath>

namespace latemu {

Tensor ParamSet::add(const std::string& name, Shape shape, std::vector<float> data) {
    for (const auto& p : params_) {
        if (p.name() == name) throw std::runtime_error("duplicate parameter name '" + name + "'");
    }
    Tensor t = Tensor::param(name, std::move(shape), std::move(data));
    params_.push_back(t);
    return t;
}

int64_t ParamSet::count_scalars() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

namespace init {

std::vector<float> kaiming(Shape shape, int64_t fan_in, Rng& rng) {
    const float bound = std::sqrt(1.0f / static_cast<float>(fan_in));
    std::vector<float> out(static_cast<size_t>(numel(shape)));
    for (auto& v : out) v = (2.0f * rng.uniform() - 1.0f) * bound;
    return out;
}

std::vector<float> normal(Shape shape, float std_dev, Rng& rng) {
    std::vector<float> out(static_cast<size_t>(numel(shape)));
    for (auto& v : out) v = rng.normal() * std_dev;
    return out;
}

std::vector<float> zeros(Shape shape) {
    return std::vector<float>(static_cast<size_t>(numel(shape)), 0.0f);
}

std::vector<float> near_identity(int64_t out_ch, int64_t in_ch, float noise_scale, Rng& rng) {
    std::vector<float> w(static_cast<size_t>(out_ch * in_ch), 0.0f);
    if (out_ch == in_ch) {
        for (int64_t i = 0; i < out_ch; ++i) w[static_cast<size_t>(i * in_ch + i)] = 1.0f;
    } else if (in_ch > out_ch) {
        if (in_ch % out_ch != 0) throw ShapeError("near_identity: in_ch must be multiple of out_ch");
        const int64_t g = in_ch / out_ch;
        for (int64_t o = 0; o < out_ch; ++o) {
            for (int64_t j = 0; j < g; ++j) {
                w[static_cast<size_t>(o * in_ch + o * g + j)] = 1.0f / static_cast<float>(g);
            }
        }
    } else {
        if (out_ch % in_ch != 0) throw ShapeError("near_identity: out_ch must be multiple of in_ch");
        const int64_t g = out_ch / in_ch;
        for (int64_t o = 0; o < out_ch; ++o) {
            w[static_cast<size_t>(o * in_ch + o / g)] = 1.0f;
        }
    }
    for (auto& v : w) v += rng.normal() * noise_scale;
    return w;
}

}  // namespace init

Linear::Linear(ParamSet& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
               bool zero_init) {
    w = ps.add(name + ".w", {in, out},
               zero_init ? init::zeros({in, out}) : init::kaiming({in, out}, in, rng));
    b = ps.add(name + ".b", {out}, init::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const {
    const int64_t in_dim = w.dim(0);
    if (x.shape().back() != in_dim) {
        throw ShapeError("linear: input features " + std::to_string(x.shape().back()) +
                         " != " + std::to_string(in_dim));
    }
    Shape out_shape = x.shape();
    out_shape.back() = w.dim(1);
    Tensor flat = ops::reshape(x, {x.numel() / in_dim, in_dim});
    Tensor y = ops::add_bias(ops::matmul(flat, w), b);
    return ops::reshape(y, out_shape);
}

Conv2d::Conv2d(ParamSet& ps, const std::string& name, int64_t in, int64_t out, int k, Pad pad_,
               Rng& rng, bool zero_init) {
    pad = pad_;
    const int64_t fan_in = in * k * k;
    w = ps.add(name + ".w", {out, in, k, k},
               zero_init ? init::zeros({out, in, k, k}) : init::kaiming({out, in, k, k}, fan_in, rng));
    b = ps.add(name + ".b", {out}, init::zeros({out}));
}

Conv2d Conv2d::near_identity(ParamSet& ps, const std::string& name, int64_t in, int64_t out,
                             Pad pad, float noise_scale, Rng& rng) {
    Conv2d c;
    c.pad = pad;
    c.w = ps.add(name + ".w", {out, in, 1, 1}, init::near_identity(out, in, noise_scale, rng));
    c.b = ps.add(name + ".b", {out}, init::zeros({out}));
    return c;
}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d(x, w, b, pad); }

LayerNorm::LayerNorm(ParamSet& ps, const std::string& name, int64_t channels) {
    gamma = ps.add(name + ".g", {channels}, std::vector<float>(static_cast<size_t>(channels), 1.0f));
    beta = ps.add(name + ".b", {channels}, init::zeros({channels}));
}

Attention::Attention(ParamSet& ps, const std::string& name, int64_t embed, int64_t heads_,
                     bool qk_norm_, bool use_rope_, bool value_residual, Rng& rng)
    : qkv(ps, name + ".qkv", embed, 3 * embed, rng),
      out(ps, name + ".out", embed, embed, rng, /*zero_init=*/true),
      heads(heads_),
      qk_norm(qk_norm_),
      use_rope(use_rope_) {
    if (embed % heads_ != 0) throw ShapeError("attention: embed not divisible by heads");
    if (qk_norm_) {
        qk_gain = ps.add(name + ".qk_gain", {heads_},
                         std::vector<float>(static_cast<size_t>(heads_), 1.0f));
    }
    if (value_residual) {
        vres_alpha = ps.add(name + ".vres_alpha", {1}, {0.0f});
    }
}

Tensor Attention::forward(const Tensor& x, const RopeTable* rope_table, Tensor* v_first) const {
    const int64_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
    const int64_t D = C / heads;
    Tensor qkv_out = qkv.forward(x);  // [B,T,3C]
    auto split_heads = [&](const Tensor& t) {
        // [B,T,C] -> [B,H,T,D]
        return ops::permute(ops::reshape(t, {B, T, heads, D}), {0, 2, 1, 3});
    };
    Tensor q = split_heads(ops::slice(qkv_out, 2, 0, C));
    Tensor k = split_heads(ops::slice(qkv_out, 2, C, C));
    Tensor v = split_heads(ops::slice(qkv_out, 2, 2 * C, C));

    if (v_first != nullptr) {
        if (!v_first->defined()) {
            *v_first = v;  // first block donates its values to later mixes
        } else if (vres_alpha.defined()) {
            v = ops::value_residual_mix(v, *v_first, vres_alpha);
        }
    }

    float logit_scale = 1.0f / std::sqrt(static_cast<float>(D));
    if (qk_norm) {
        q = ops::scale_heads(ops::rms_norm(q), qk_gain);
        k = ops::rms_norm(k);
        // unit-RMS q and k: q.k = D * cos(angle), so divide by D to get
        // cosine logits under the learnable per-head gain
        logit_scale = 1.0f / static_cast<float>(D);
    }
    if (use_rope) {
        if (rope_table == nullptr) throw ShapeError("attention: rope enabled but no table given");
        q = ops::rope(q, *rope_table);
        k = ops::rope(k, *rope_table);
    }

    Tensor q3 = ops::reshape(q, {B * heads, T, D});
    Tensor k3 = ops::reshape(k, {B * heads, T, D});
    Tensor v3 = ops::reshape(v, {B * heads, T, D});
    Tensor logits = ops::scale(ops::bmm(q3, ops::transpose_last(k3)), logit_scale);
    Tensor attn = ops::softmax(logits);
    Tensor mixed = ops::bmm(attn, v3);  // [BH,T,D]
    Tensor merged = ops::reshape(
        ops::permute(ops::reshape(mixed, {B, heads, T, D}), {0, 2, 1, 3}), {B, T, C});
    return out.forward(merged);
}

}  // namespace latemu

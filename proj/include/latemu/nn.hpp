#pragma once

#include <string>
#include <vector>

#include "latemu/ops.hpp"
#include "latemu/rng.hpp"
#include "latemu/tensor.hpp"

namespace latemu {

// Ordered registry of named trainable tensors. Registration order fixes the
// checkpoint layout and the optimizer state layout.
class ParamSet {
public:
    Tensor add(const std::string& name, Shape shape, std::vector<float> data);
    std::vector<Tensor>& all() { return params_; }
    const std::vector<Tensor>& all() const { return params_; }
    int64_t count_scalars() const;

private:
    std::vector<Tensor> params_;
};

namespace init {

std::vector<float> kaiming(Shape shape, int64_t fan_in, Rng& rng);
std::vector<float> normal(Shape shape, float std_dev, Rng& rng);
std::vector<float> zeros(Shape shape);

// Channel-mixing matrix close to an identity map: when out==in this is I,
// when out<in each output averages a contiguous group of inputs, when
// out>in each input is duplicated across a contiguous group of outputs.
// Gaussian noise of `noise_scale` (relative to the identity weights) is
// added on top. Requires the larger extent to be a multiple of the smaller.
std::vector<float> near_identity(int64_t out_ch, int64_t in_ch, float noise_scale, Rng& rng);

}  // namespace init

// linear layer y = x W + b for x[..., in]; weight stored [in, out].
struct Linear {
    Tensor w, b;
    Linear() = default;
    Linear(ParamSet& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
           bool zero_init = false);
    Tensor forward(const Tensor& x) const;
    int64_t in() const { return w.dim(0); }
    int64_t out() const { return w.dim(1); }
};

// 2d convolution wrapper holding weight [out,in,k,k] and bias [out].
struct Conv2d {
    Tensor w, b;
    Pad pad = Pad::Periodic;
    Conv2d() = default;
    Conv2d(ParamSet& ps, const std::string& name, int64_t in, int64_t out, int k, Pad pad,
           Rng& rng, bool zero_init = false);
    // 1x1 convolution with a near-identity channel map.
    static Conv2d near_identity(ParamSet& ps, const std::string& name, int64_t in, int64_t out,
                                Pad pad, float noise_scale, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
    Tensor gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamSet& ps, const std::string& name, int64_t channels);
    Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
    Tensor forward_chan(const Tensor& x) const { return ops::layer_norm_chan(x, gamma, beta); }
};

// Multi-head self-attention over x[B,T,C]. Optional per-head RMS
// query/key normalization, rotary embeddings and value-residual mixing.
struct Attention {
    Linear qkv, out;
    Tensor qk_gain;     // [heads], defined when qk_norm
    Tensor vres_alpha;  // scalar, defined when value_residual
    int64_t heads = 1;
    bool qk_norm = false;
    bool use_rope = false;

    Attention() = default;
    Attention(ParamSet& ps, const std::string& name, int64_t embed, int64_t heads, bool qk_norm,
              bool use_rope, bool value_residual, Rng& rng);

    // v_first: in/out slot for value-residual chaining across blocks; the
    // first block stores its values there, later blocks mix with it.
    Tensor forward(const Tensor& x, const RopeTable* rope_table, Tensor* v_first) const;
};

}  // namespace latemu

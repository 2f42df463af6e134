#pragma once

#include <cstdint>
#include <vector>

#include "latemu/rng.hpp"
#include "latemu/tensor.hpp"

namespace latemu {

enum class Pad { Periodic, Zero };

// Precomputed rotation table for rotary embeddings: one angle per
// (position, channel pair).
struct RopeTable {
    int64_t positions = 0;
    int64_t half = 0;  // pairs per head
    std::vector<float> cos_v;
    std::vector<float> sin_v;
};

namespace ops {

// --- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float c);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor saturate(const Tensor& x, float bound);

// --- shape ------------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor transpose_last(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length);

// --- linear algebra ---------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);          // [m,k]x[k,n]
Tensor bmm(const Tensor& a, const Tensor& b);             // [b,m,k]x[b,k,n]
Tensor add_bias(const Tensor& x, const Tensor& bias);     // x[...,C] + bias[C]
Tensor bias_nchw(const Tensor& x, const Tensor& bias);    // x[N,C,H,W] + bias[C]
Tensor add_tokens(const Tensor& x, const Tensor& table);  // x[B,T,C] + table[T,C]

// --- normalization / activations over rows ----------------------------------
// gamma/beta may be undefined Tensors for a plain (non-affine) normalization.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor layer_norm_chan(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor rms_norm(const Tensor& x, float eps = 1e-6f);
Tensor softmax(const Tensor& x);

// --- convolution and resampling ---------------------------------------------
// Odd square kernels, stride one, output spatially same-sized as input.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Pad padding);
Tensor space_to_depth(const Tensor& x, int factor);
Tensor depth_to_space(const Tensor& x, int factor);

// --- attention helpers --------------------------------------------------
Tensor modulate(const Tensor& x, const Tensor& scale_bc, const Tensor& shift_bc);
Tensor gate(const Tensor& x, const Tensor& gate_bc);
Tensor scale_heads(const Tensor& x, const Tensor& s);  // x[B,H,T,D] * s[H]
Tensor rope(const Tensor& x, const RopeTable& table);  // x[B,H,T,D]
Tensor value_residual_mix(const Tensor& v, const Tensor& v_first, const Tensor& alpha);

Tensor dropout(const Tensor& x, float p, Rng& rng, bool training);

// --- reductions / losses ------------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor l1(const Tensor& a, const Tensor& b);
// Mean of weight*(pred-target)^2 over elements with nonzero weight mass.
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& weight);

}  // namespace ops

}  // namespace latemu

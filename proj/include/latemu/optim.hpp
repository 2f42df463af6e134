#pragma once

#include <vector>

#include "latemu/tensor.hpp"

namespace latemu {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float grad_clip = 1.0f;  // global-norm threshold; <=0 disables clipping
};

struct AdamState {
    int64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    void init(const std::vector<Tensor>& params);
};

// Global-norm clipping is applied to the full gradient set before the
// moment updates. Parameters without a recorded gradient are treated as
// zero-gradient. Throws NonFiniteError on non-finite gradients without
// touching parameters or state.
void adam_step(std::vector<Tensor>& params, const Gradients& grads, AdamState& state,
               const AdamConfig& cfg, float lr_override = -1.0f);

// Cosine decay from lr0 to ~0 over total steps, with optional linear warmup.
float cosine_lr(float lr0, int64_t step, int64_t total_steps, int64_t warmup_steps = 0);

// Merge per-shard gradient sets (batch data parallelism) in shard order.
void accumulate_gradients(const std::vector<Tensor>& params, std::vector<Gradients>& shards,
                          Gradients& out, const std::vector<float>& shard_weights);

}  // namespace latemu

#include "latemu/optim.hpp"

#include <cmath>

namespace latemu {

void AdamState::init(const std::vector<Tensor>& params) {
    step = 0;
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].data().size(), 0.0f);
        v[i].assign(params[i].data().size(), 0.0f);
    }
}

void adam_step(std::vector<Tensor>& params, const Gradients& grads, AdamState& state,
               const AdamConfig& cfg, float lr_override) {
    if (state.m.size() != params.size()) {
        throw std::runtime_error("adam_step: state not initialized for this parameter set");
    }
    static const std::vector<float> kZeroGrad;

    // Pass 1: validate and measure the global norm.
    double sq_norm = 0.0;
    std::vector<const std::vector<float>*> gptr(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        if (!grads.contains(params[i])) {
            gptr[i] = &kZeroGrad;
            continue;
        }
        const auto& g = grads.at(params[i]);
        if (g.size() != params[i].data().size()) {
            throw ShapeError("adam_step: gradient shape mismatch for '" + params[i].name() + "'");
        }
        for (float v : g) {
            if (!std::isfinite(v)) {
                throw NonFiniteError("adam_step: non-finite gradient for '" + params[i].name() +
                                     "'; step aborted");
            }
            sq_norm += static_cast<double>(v) * v;
        }
        gptr[i] = &g;
    }
    float clip_scale = 1.0f;
    if (cfg.grad_clip > 0.0f) {
        const double norm = std::sqrt(sq_norm);
        if (norm > cfg.grad_clip) clip_scale = static_cast<float>(cfg.grad_clip / norm);
    }

    state.step += 1;
    const float lr = lr_override >= 0.0f ? lr_override : cfg.lr;
    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(state.step));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(state.step));

    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data_mut();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = *gptr[i];
        for (size_t j = 0; j < p.size(); ++j) {
            const float gj = g.empty() ? 0.0f : g[j] * clip_scale;
            m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * gj * gj;
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

float cosine_lr(float lr0, int64_t step, int64_t total_steps, int64_t warmup_steps) {
    if (warmup_steps > 0 && step < warmup_steps) {
        return lr0 * static_cast<float>(step + 1) / static_cast<float>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return lr0;
    const double u = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(total_steps - warmup_steps);
    return lr0 * 0.5f * (1.0f + static_cast<float>(std::cos(3.14159265358979323846 * u)));
}

void accumulate_gradients(const std::vector<Tensor>& params, std::vector<Gradients>& shards,
                          Gradients& out, const std::vector<float>& shard_weights) {
    for (const auto& p : params) {
        auto& acc = out.buffer(p.node(), p.shape());
        for (size_t s = 0; s < shards.size(); ++s) {
            if (!shards[s].contains(p)) continue;
            const auto& g = shards[s].at(p);
            const float w = shard_weights.empty() ? 1.0f : shard_weights[s];
            for (size_t j = 0; j < acc.size(); ++j) acc[j] += w * g[j];
        }
    }
}

}  // namespace latemu

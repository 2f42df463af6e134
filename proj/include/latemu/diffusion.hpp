#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "latemu/nn.hpp"
#include "latemu/tensor.hpp"

namespace latemu {

// Rectified-flow noise schedule alpha_t = 1-t, sigma_t = t on t in [0,1],
// with the derived probability-flow coefficients
//   f_t = alpha'/alpha = -1/(1-t),   g_t^2 = 2 sigma sigma' - 2 f sigma^2 = 2t/(1-t).
// Both are clamped near t=1 where they blow up.
struct RectifiedFlow {
    double t_min = 1e-3;
    double clamp_hi = 1e-3;  // coefficients evaluated at most at t = 1 - clamp_hi

    static double alpha(double t) { return 1.0 - t; }
    static double sigma(double t) { return t; }
    static double snr(double t) { return (1.0 - t) / t; }

    double drift(double t) const {
        const double tc = std::min(t, 1.0 - clamp_hi);
        return -1.0 / (1.0 - tc);
    }
    double diffusion_sq(double t) const {
        const double tc = std::min(t, 1.0 - clamp_hi);
        return 2.0 * tc / (1.0 - tc);
    }
};

// z_t = alpha_t z + sigma_t eps
void noise_state(const std::vector<float>& z, double t, const std::vector<float>& eps,
                 std::vector<float>& z_t);

// Tweedie inversion of the denoiser output: score = (alpha_t d - z_t) / sigma_t^2.
// Rejects t = 0 where sigma vanishes.
void denoiser_to_score(const std::vector<float>& d_out, const std::vector<float>& z_t, double t,
                       std::vector<float>& score);

// Binary conditioning mask over the n+1 bundled frames: a contiguous run of
// ones anchored at the left or right end.
struct Mask {
    std::vector<uint8_t> bits;

    int64_t size() const { return static_cast<int64_t>(bits.size()); }
    int64_t popcount() const;
    bool valid() const;  // contiguous, anchored, 1 <= popcount <= n
    static Mask left(int64_t frames, int64_t context);
    static Mask right(int64_t frames, int64_t context);
    Mask flipped() const;
};

// pmf of Pois(lambda) truncated to [1, n]
std::vector<double> truncated_poisson_pmf(int64_t n, double lambda);

// Context length c ~ truncated Pois(lambda); the left-anchored mask is
// flipped to right-anchored with probability flip_prob.
Mask sample_mask(int64_t n, double lambda, double flip_prob, Rng& rng);

// t ~ Uniform(t_min, 1]
double sample_t(Rng& rng, double t_min = 1e-3);

struct DenoiserConfig {
    int64_t channels = 4;  // per-frame channels at the network boundary
    int64_t grid_h = 4;
    int64_t grid_w = 4;
    int64_t bundle = 5;   // n+1 frames
    int64_t theta_dim = 4;
    int64_t embed = 128;
    int64_t blocks = 6;
    int64_t heads = 4;
    int64_t mlp_ratio = 4;
    int patch = 1;  // spatial patching for pixel-space models
    float dropout = 0.05f;
    bool qk_norm = true;
    bool use_rope = true;
    bool value_residual = true;
    bool time_conditioned = true;  // false: neural-solver twin (theta only)
    uint64_t init_seed = 0;

    int64_t tokens_per_frame() const { return (grid_h / patch) * (grid_w / patch); }
    int64_t token_count() const { return bundle * tokens_per_frame(); }
    int64_t token_features() const { return channels * patch * patch + 1; }  // +1 mask bit
};

// Transformer denoiser/solver over bundled latent (or patched pixel) states,
// modulated by (theta, t) through adaptive layer norms.
class DenoiserNet {
public:
    explicit DenoiserNet(const DenoiserConfig& cfg);

    // bundle_in: [B, F, C, H, W] with known frames clean and unknown frames
    // noised (or zeroed for the solver); t holds one diffusion time per row;
    // masks holds one entry per row (or a single shared entry).
    Tensor forward(const Tensor& bundle_in, const std::vector<Mask>& masks, const Tensor& theta,
                   const std::vector<float>& t, Rng* dropout_rng = nullptr) const;
    Tensor forward(const Tensor& bundle_in, const Mask& mask, const Tensor& theta,
                   const std::vector<float>& t, Rng* dropout_rng = nullptr) const {
        return forward(bundle_in, std::vector<Mask>{mask}, theta, t, dropout_rng);
    }

    std::vector<Tensor>& params() { return params_.all(); }
    const std::vector<Tensor>& params() const { return params_.all(); }
    const DenoiserConfig& config() const { return cfg_; }

private:
    struct Block {
        Linear ada;  // cond -> 6*embed (shift/scale/gate for attn and mlp)
        Attention attn;
        Linear mlp_in, mlp_out;
    };

    Tensor embed_tokens(const Tensor& bundle_in, const std::vector<Mask>& masks) const;
    Tensor condition(const Tensor& theta, const std::vector<float>& t) const;

    DenoiserConfig cfg_;
    ParamSet params_;
    Linear embed_;
    Tensor pos_emb_;
    Linear theta_mlp1_, theta_mlp2_;
    Linear time_mlp1_, time_mlp2_;
    std::vector<Block> blocks_;
    Linear final_ada_;  // cond -> 2*embed (shift, scale)
    Linear head_;
    RopeTable rope_;
};

// Masked-frame input assembly z*b + z_t*(1-b) as raw buffers; eps enters
// only at unknown frames.
void assemble_dsm_input(const std::vector<float>& z_bundle, const std::vector<float>& z_t,
                        const Mask& mask, int64_t frame_elems, std::vector<float>& input);

// Denoising score matching objective over the unknown frames (lambda_t = 1).
Tensor dsm_loss(const DenoiserNet& net, const Tensor& z_bundle, const Tensor& theta,
                const std::vector<Mask>& masks, const std::vector<float>& t,
                const std::vector<float>& eps, Rng* dropout_rng = nullptr);
inline Tensor dsm_loss(const DenoiserNet& net, const Tensor& z_bundle, const Tensor& theta,
                       const Mask& mask, const std::vector<float>& t,
                       const std::vector<float>& eps, Rng* dropout_rng = nullptr) {
    return dsm_loss(net, z_bundle, theta, std::vector<Mask>{mask}, t, eps, dropout_rng);
}

// Mean-regression twin: same plumbing without noise or diffusion time.
Tensor solver_loss(const DenoiserNet& net, const Tensor& z_bundle, const Tensor& theta,
                   const std::vector<Mask>& masks, Rng* dropout_rng = nullptr);
inline Tensor solver_loss(const DenoiserNet& net, const Tensor& z_bundle, const Tensor& theta,
                          const Mask& mask, Rng* dropout_rng = nullptr) {
    return solver_loss(net, z_bundle, theta, std::vector<Mask>{mask}, dropout_rng);
}

// Per-element weight tensor (1 on unknown frames) matching a bundle shape.
Tensor mask_weights(const std::vector<Mask>& masks, const Shape& bundle_shape);

}  // namespace latemu

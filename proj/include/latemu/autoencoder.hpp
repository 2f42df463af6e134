#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latemu/field.hpp"
#include "latemu/nn.hpp"

namespace latemu {

struct AutoencoderConfig {
    int64_t in_channels = 2;
    int64_t height = 32;
    int64_t width = 32;
    std::vector<int64_t> channels = {16, 32, 64, 64};  // per level, top to bottom
    int64_t blocks_per_level = 2;
    int64_t latent_channels = 16;
    bool attn_bottom = true;
    int64_t heads = 4;
    float dropout = 0.05f;
    float bound = 5.0f;  // latent saturation bound
    bool identity_init = true;
    float init_noise = 1e-2f;  // relative perturbation of the identity maps
    Pad padding = Pad::Periodic;
    uint64_t init_seed = 0;

    // factor-2 resampling between consecutive levels
    int64_t reduction() const { return int64_t{1} << (channels.size() - 1); }
    int64_t latent_h() const { return height / reduction(); }
    int64_t latent_w() const { return width / reduction(); }
    int64_t compression_rate() const {
        return (in_channels * height * width) / (latent_channels * latent_h() * latent_w());
    }
};

// Convolutional autoencoder with residual blocks, channel-wise layer norm,
// SiLU activations, optional bottom-level self-attention, space-to-depth
// resampling initialized near identity, and a saturating latent bound.
class ConvAutoencoder {
public:
    explicit ConvAutoencoder(const AutoencoderConfig& cfg);

    // x: [N, C_pixel, H, W] -> z: [N, C_latent, H/r, W/r], |z| < bound
    Tensor encode(const Tensor& x, Rng* dropout_rng = nullptr) const;
    // z -> x_hat (unbounded output)
    Tensor decode(const Tensor& z, Rng* dropout_rng = nullptr) const;

    std::vector<Tensor>& params() { return params_.all(); }
    const std::vector<Tensor>& params() const { return params_.all(); }
    const AutoencoderConfig& config() const { return cfg_; }

private:
    struct ResBlock {
        LayerNorm ln1, ln2;
        Conv2d conv1, conv2;
    };
    struct AttnBlock {
        LayerNorm ln;
        Attention attn;
        bool active = false;
    };

    Tensor run_block(const ResBlock& b, const Tensor& x, Rng* dropout_rng) const;
    Tensor run_attn(const AttnBlock& a, const Tensor& x) const;

    AutoencoderConfig cfg_;
    ParamSet params_;
    Conv2d enc_stem_;
    std::vector<std::vector<ResBlock>> enc_blocks_;
    std::vector<Conv2d> enc_down_;  // after space-to-depth
    AttnBlock enc_attn_;
    Conv2d enc_latent_;

    Conv2d dec_stem_;
    AttnBlock dec_attn_;
    std::vector<std::vector<ResBlock>> dec_blocks_;  // bottom-up order
    std::vector<Conv2d> dec_up_;                     // before depth-to-space
    Conv2d dec_head_;
};

// Mean absolute error reconstruction objective (no KL, perceptual or
// adversarial terms).
Tensor ae_loss(const Tensor& x, const Tensor& x_hat);

struct AeTrainConfig {
    int64_t steps = 600;
    int64_t batch = 16;
    float lr = 1e-3f;
    int64_t warmup = 0;
    float grad_clip = 1.0f;
    int64_t val_every = 50;  // one logging epoch per validation cycle
    int threads = 2;
    bool augment = true;
    uint64_t seed = 0;
    float divergence_factor = 10.0f;
    std::string checkpoint_path;  // written every validation cycle when set
    std::string log_path;         // csv: epoch, step, train_mae, val_mae, wall_s
};

struct AeTrainResult {
    double initial_val_mae = 0.0;
    double final_val_mae = 0.0;
    std::vector<double> val_history;  // index 0 is the untrained model
    bool diverged = false;
};

// Trains on normalized frames with random axis permutations, flips and
// (periodic only) rolls. Aborts when the validation MAE exceeds
// divergence_factor times its initial value.
AeTrainResult train_autoencoder(ConvAutoencoder& model, const std::vector<Trajectory>& train_set,
                                const std::vector<Trajectory>& val_set, const AeTrainConfig& cfg);

// Mean absolute reconstruction error over every frame of a split.
double autoencoder_val_mae(const ConvAutoencoder& model, const std::vector<Trajectory>& split,
                           int threads);

}  // namespace latemu

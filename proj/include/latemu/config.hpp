#pragma once

#include <string>
#include <vector>

#include "latemu/autoencoder.hpp"
#include "latemu/dataset.hpp"
#include "latemu/diffusion.hpp"
#include "latemu/metrics.hpp"

namespace latemu {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AutoencoderEntry {
    std::string id = "c16";
    int64_t latent_channels = 16;
    std::vector<int64_t> channels = {16, 32, 64, 64};
    int64_t blocks_per_level = 2;
    bool attn_bottom = true;
    int64_t heads = 4;
    float dropout = 0.05f;
    bool identity_init = true;
    AeTrainConfig train;
};

struct EmulatorNetEntry {
    int64_t embed = 128;
    int64_t blocks = 6;
    int64_t heads = 4;
    int64_t mlp_ratio = 4;
    int patch = 1;
    float dropout = 0.05f;
    bool qk_norm = true;
    bool rope = true;
    bool value_residual = true;
};

struct EmulatorTrainEntry {
    int64_t steps = 1200;
    int64_t batch = 16;
    float lr = 3e-4f;
    int64_t warmup = 50;
    float grad_clip = 1.0f;
    int64_t val_every = 100;
    uint64_t seed = 2;
    double t_min = 1e-3;
    double mask_lambda = 2.0;
    double flip_prob = 0.33;
    float divergence_factor = 10.0f;
};

struct ExperimentConfig {
    std::string name = "desk";
    uint64_t seed = 1234;
    std::string output_dir = "runs/desk";
    int threads = 0;  // 0: hardware default

    DatasetSpec dataset;
    std::vector<AutoencoderEntry> autoencoders;
    std::vector<std::string> emulator_kinds = {"diffusion", "solver"};
    int64_t bundle_n = 4;
    EmulatorNetEntry net;
    EmulatorTrainEntry emulator_train;

    int64_t sampler_steps = 16;
    std::string sampler_method = "ab3";  // ab3 | euler

    int64_t ensemble = 8;
    int64_t eval_context = 1;
    std::vector<HorizonWindow> horizons = {{1, 10}, {11, 31}};
    uint64_t eval_seed = 77;

    std::string config_hash;  // stamped after parsing

    // directory layout under output_dir (cache root overridable via the
    // LATEMU_CACHE environment variable)
    std::string data_root() const { return output_dir + "/data"; }
    std::string cache_root() const;
    std::string models_dir() const { return output_dir + "/models"; }
    std::string rollouts_dir() const { return output_dir + "/rollouts"; }
    std::string reports_dir() const { return output_dir + "/reports"; }

    const AutoencoderEntry& autoencoder(const std::string& id) const;
    AutoencoderConfig ae_config(const AutoencoderEntry& entry) const;
    int effective_threads() const;
};

// Desk-scale defaults (the spec sheet values scaled for CPU runs).
ExperimentConfig default_config();

// Defaults overridden by the JSON file; unknown keys are rejected so typos
// fail loudly. Throws ConfigError with file/line diagnostics on bad input.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin);

std::string config_canonical_json(const ExperimentConfig& cfg);

}  // namespace latemu

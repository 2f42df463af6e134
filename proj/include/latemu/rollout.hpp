#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latemu/autoencoder.hpp"
#include "latemu/dataset.hpp"
#include "latemu/diffusion.hpp"
#include "latemu/sampler.hpp"

namespace latemu {

struct RolloutPlan {
    int64_t bundle_n = 4;       // n future frames per full-context step
    int64_t context = 1;        // c carried frames
    int64_t ensemble = 8;       // K members
    int64_t total_frames = 33;  // stored frames including the initial state
    std::string kind = "diffusion";  // diffusion | solver | persistence

    // autoregressive step count; the first step conditions on the single
    // initial frame, later steps carry c frames
    int64_t steps() const;
    void validate() const;
};

// On-disk latent store: <root>/<dataset>/<ae-hash>/traj_<index>.lat, one
// entry per source trajectory, same binary container as .traj files. The
// autoencoder hash keys the directory, so a retrained model never reuses
// stale latents.
struct LatentCachePaths {
    std::string root;
    std::string dir(const std::string& dataset, const std::string& ae_hash) const;
    std::string entry(const std::string& dataset, const std::string& ae_hash,
                      int64_t index) const;
};

struct EncodeStats {
    int64_t encoded = 0;
    int64_t skipped = 0;
    int64_t invalidated = 0;  // present but stale entries that were redone
};

// Encodes every frame of every trajectory once; re-runs are no-ops when the
// sidecar carries the same autoencoder hash.
EncodeStats encode_dataset(const ConvAutoencoder& ae, const std::string& ae_hash,
                           const DatasetSpec& spec, const std::string& data_root,
                           const Normalizer& norm, const LatentCachePaths& cache, int threads);

std::vector<Trajectory> load_latent_split(const DatasetSpec& spec, const LatentCachePaths& cache,
                                          const std::string& ae_hash, Split split);

// Everything needed to advance latent states with one emulator.
struct EmulatorBundle {
    const DenoiserNet* net = nullptr;  // unused for persistence
    RectifiedFlow sched;
    int64_t sampler_steps = 16;
    OdeMethod method = OdeMethod::AB3;
};

struct RolloutResult {
    // members[k] holds total_frames latent fields, index 0 the initial state
    std::vector<std::vector<Field>> members;
    std::vector<uint8_t> blow_up;  // member excluded from statistics when set
    int64_t ar_steps = 0;
};

// Autoregressive latent rollout with temporal bundling. Diffusion draws K
// distinct members; solver and persistence members are identical by
// construction (computed once, replicated).
RolloutResult rollout(const EmulatorBundle& em, const Field& z0,
                      const std::vector<float>& theta_cond, const RolloutPlan& plan,
                      uint64_t seed, int threads);

// Decode one member back to pixel space and undo the normalizer.
std::vector<Field> decode_rollout(const ConvAutoencoder& ae, const Normalizer& norm,
                                  const std::vector<Field>& latents, int threads);

}  // namespace latemu

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latemu/field.hpp"
#include "latemu/normalizer.hpp"
#include "latemu/rng.hpp"
#include "latemu/tensor.hpp"

namespace latemu {

struct ThetaRange {
    double lo = 0.0;
    double hi = 0.0;
    double sample(Rng& rng) const { return lo + (hi - lo) * rng.uniform_double(); }
};

struct DatasetSpec {
    std::string name = "adv";
    std::string generator = "advection";  // "advection" | "grayscott"
    int64_t height = 32;
    int64_t width = 32;
    int64_t frames = 32;  // frames beyond the initial state
    int stride = 4;       // advection: steps per frame; gray-scott: substeps
    int64_t train_count = 96;
    int64_t val_count = 8;
    int64_t test_count = 8;
    uint64_t seed0 = 1000;

    // advection
    ThetaRange vx{-2.0, 2.0};
    ThetaRange vy{-2.0, 2.0};
    ThetaRange nu{1e-4, 1e-3};
    double ic_power = 1.8;

    // gray-scott
    ThetaRange feed{0.025, 0.045};
    ThetaRange kill{0.055, 0.065};
    int blob_count = 6;

    int64_t total_count() const { return train_count + val_count + test_count; }
};

enum class Split { Train, Val, Test };
std::string split_name(Split s);

// The split is a pure function of the trajectory seed: trajectory i has
// seed seed0+i and the index ranges [0,train), [train,train+val), ... fix
// its split.
Split split_of_index(const DatasetSpec& spec, int64_t index);

// Draw theta and run the generator for trajectory `index` of the spec.
Trajectory generate_one(const DatasetSpec& spec, int64_t index);

struct DatasetDir {
    std::string root;  // <data_root>/<name>
    std::string traj_path(Split s, int64_t index) const;
    std::string meta_path() const { return root + "/meta.json"; }
    std::string normalizer_path() const { return root + "/normalizer.json"; }
};

// Generates every trajectory, fits the normalizer on the training split and
// writes meta + sidecars. Skips work when meta.json matches config_hash
// (unless force). Returns the number of trajectories written.
int64_t generate_dataset(const DatasetSpec& spec, const std::string& data_root,
                         const std::string& config_hash, int threads, bool force);

bool dataset_ready(const DatasetSpec& spec, const std::string& data_root,
                   const std::string& config_hash);

std::vector<Trajectory> load_split(const DatasetSpec& spec, const std::string& data_root, Split s);
Normalizer load_dataset_normalizer(const DatasetSpec& spec, const std::string& data_root);

// --- tensor bridging ---------------------------------------------------
Tensor fields_to_batch(const std::vector<const Field*>& fields);
Field batch_to_field(const Tensor& batch, int64_t index);

// Random axis permutation, flips, and (for periodic data) rolls applied to
// one [C,H,W] sample in place.
void augment_field(std::vector<float>& chw, int64_t c, int64_t h, int64_t w, bool periodic,
                   Rng& rng);

}  // namespace latemu

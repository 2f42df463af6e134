#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latemu/checkpoint.hpp"  // IoError

namespace latemu {

// One physical state: a dense [C,H,W] grid.
struct Field {
    int64_t channels = 0;
    int64_t height = 0;
    int64_t width = 0;
    std::vector<float> values;

    Field() = default;
    Field(int64_t c, int64_t h, int64_t w)
        : channels(c), height(h), width(w), values(static_cast<size_t>(c * h * w), 0.0f) {}

    float& at(int64_t c, int64_t y, int64_t x) {
        return values[static_cast<size_t>((c * height + y) * width + x)];
    }
    float at(int64_t c, int64_t y, int64_t x) const {
        return values[static_cast<size_t>((c * height + y) * width + x)];
    }
    int64_t numel() const { return channels * height * width; }
    bool finite() const;
};

enum class Boundary { Periodic, Open };

std::string boundary_name(Boundary b);
Boundary boundary_from_name(const std::string& name);

// Time-ordered sequence of fields plus the simulation parameters.
struct Trajectory {
    std::vector<Field> fields;  // L+1 states
    std::vector<float> theta;
    int stride = 1;
    Boundary boundary = Boundary::Periodic;
    std::vector<std::string> channel_names;
    std::vector<std::string> channel_transforms;  // "identity" | "log1p"
    uint64_t seed = 0;
    std::string normalizer_ref;
    std::string config_hash;
    std::string extra;  // free-form JSON carried through the sidecar

    int64_t frame_count() const { return static_cast<int64_t>(fields.size()); }
    void validate() const;  // uniform shapes, power-of-two dims, finite values
};

// Binary frame container + JSON sidecar at <path>.json. The payload is
// little-endian f32, bit-exact across a save/load round trip.
void save_trajectory(const std::string& path, const Trajectory& traj);
Trajectory load_trajectory(const std::string& path);

// Fixed container overhead in bytes before the frame payload.
int64_t trajectory_header_bytes();

}  // namespace latemu

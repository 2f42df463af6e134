#pragma once

#include <string>
#include <vector>

#include "latemu/field.hpp"

namespace latemu {

// Per-channel standardization over the training split, with an optional
// log(x+1) pre-transform for channels tagged non-negative.
struct Normalizer {
    std::vector<double> mean;
    std::vector<double> std_dev;
    std::vector<std::string> transforms;  // "identity" | "log1p"
    std::vector<double> theta_mean;
    std::vector<double> theta_std;

    Field apply(const Field& f) const;
    Field invert(const Field& f) const;
    std::vector<float> apply_theta(const std::vector<float>& theta) const;

    std::string to_json() const;
    static Normalizer from_json(const std::string& text);
    void save(const std::string& path) const;
    static Normalizer load(const std::string& path);
};

// Channel statistics over every frame of the given trajectories; throws on
// a zero-variance channel. Transforms are taken from the first trajectory's
// channel tags.
Normalizer fit_normalizer(const std::vector<Trajectory>& train);

}  // namespace latemu

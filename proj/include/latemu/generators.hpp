#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "latemu/field.hpp"

namespace latemu {

// Exact spectral solution of du/dt + v.grad(u) = nu * lap(u) on a periodic
// grid. Velocity is in cells per step; the diffusive decay of integer mode
// k is exp(-nu * |k|^2 * t) with t in steps.
class SpectralAdvection {
public:
    SpectralAdvection(std::vector<double> u0, int64_t height, int64_t width, double vx, double vy,
                      double nu);

    // Scalar field u at time t (in steps).
    std::vector<double> state_at(double t) const;
    // Derived channel: d(u)/dx - d(u)/dy, evolving under the same operator.
    std::vector<double> derived_at(double t) const;

private:
    int64_t h_, w_;
    double vx_, vy_, nu_;
    std::vector<std::complex<double>> u0_hat_;
};

struct AdvectionParams {
    double vx = 1.0;
    double vy = 0.0;
    double nu = 0.0;  // >= 0
    int64_t height = 32;
    int64_t width = 32;
    int64_t frames = 32;  // stored frames beyond the initial state
    int stride = 4;       // simulation steps per stored frame
    double ic_power = 1.8;
    double ic_mean_std = 0.3;
    uint64_t seed = 0;
};

// Advection-diffusion trajectory with channels (u, omega), omega being a
// derivative-based vorticity-like companion field.
Trajectory gen_advection(const AdvectionParams& p);

struct GrayScottParams {
    double feed = 0.035;
    double kill = 0.06;
    double du = 0.16;
    double dv = 0.08;
    double dt = 1.0;
    int64_t height = 32;
    int64_t width = 32;
    int64_t frames = 32;  // stored frames beyond the initial state
    int substeps = 40;    // solver steps per stored frame
    int blob_count = 6;
    uint64_t seed = 0;
};

// Explicit-Euler Gray-Scott reaction-diffusion trajectory, channels (u, v).
// Throws on the explicit-stability precondition dt*max(du,dv)*4 >= 1 and
// aborts with a step report if the state turns non-finite.
Trajectory gen_grayscott(const GrayScottParams& p);

}  // namespace latemu

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "latemu/field.hpp"

namespace latemu {

// Variance-normalized RMSE between two spatial fields:
// sqrt(<(u-v)^2> / (<(u-<u>)^2> + eps)).
double vrmse(const std::vector<float>& u, const std::vector<float>& v, double eps = 1e-6);

// Per-channel VRMSE, averaged across channels afterwards.
double vrmse_field(const Field& u, const Field& v, double eps = 1e-6);
std::vector<double> vrmse_per_channel(const Field& u, const Field& v, double eps = 1e-6);

// Isotropic power spectrum of one square periodic channel. Bin k holds the
// |FFT|^2/(H*W) mass of the annulus k-1/2 <= |k| < k+1/2 for k = 1..H/2;
// the k=0 (DC) mass is returned separately.
struct Spectrum {
    std::vector<double> power;  // index k-1, k = 1..H/2
    double dc = 0.0;
};
Spectrum isotropic_spectrum(const std::vector<double>& u, int64_t height, int64_t width);
Spectrum isotropic_spectrum_channel(const Field& f, int64_t channel);

// Non-square inputs are zero-padded to the enclosing square first.
Spectrum isotropic_spectrum_padded(const std::vector<double>& u, int64_t height, int64_t width);

// RMSE of (p_v/p_u - 1) over three frequency bands with edges at
// k_max^(1/3) and k_max^(2/3) (even band split in log space). p_u is
// floored at 1e-12.
std::array<double, 3> spectrum_band_rmse(const std::vector<double>& p_u,
                                         const std::vector<double>& p_v);

// Band assignment of integer wavenumber k for a given k_max (0=low,1=mid,2=high).
int band_of(int64_t k, int64_t k_max);

struct SpreadSkill {
    double skill = 0.0;
    double spread = 0.0;
    double ratio = 0.0;       // sqrt((K+1)/K) * spread / skill
    bool ratio_defined = false;
};

// Ensemble verification per Fortin et al.: skill is the RMSE of the
// ensemble mean, spread the ensemble standard deviation, both under the
// spatial mean; the ratio carries the sqrt((K+1)/K) correction.
SpreadSkill spread_skill(const std::vector<float>& truth,
                         const std::vector<const std::vector<float>*>& members);

// Arithmetic mean of per-lead values over inclusive lead-time windows.
struct HorizonWindow {
    int64_t begin = 1;
    int64_t end = 1;
    std::string label() const;
};
double horizon_mean(const std::vector<double>& per_lead_values,
                    const std::vector<int64_t>& lead_times, const HorizonWindow& w);

}  // namespace latemu

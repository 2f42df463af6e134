#include "latemu/metrics.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>

namespace latemu {

namespace {

std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

inline int64_t freq(int64_t i, int64_t n) { return i <= n / 2 ? i : i - n; }

}  // namespace

double vrmse(const std::vector<float>& u, const std::vector<float>& v, double eps) {
    if (u.size() != v.size() || u.empty()) throw IoError("vrmse: size mismatch");
    const double n = static_cast<double>(u.size());
    double mean_u = 0.0;
    for (float x : u) mean_u += x;
    mean_u /= n;
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        const double d = static_cast<double>(u[i]) - v[i];
        num += d * d;
        const double c = static_cast<double>(u[i]) - mean_u;
        den += c * c;
    }
    return std::sqrt((num / n) / (den / n + eps));
}

std::vector<double> vrmse_per_channel(const Field& u, const Field& v, double eps) {
    if (u.channels != v.channels || u.height != v.height || u.width != v.width) {
        throw IoError("vrmse: field shape mismatch");
    }
    const int64_t hw = u.height * u.width;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(u.channels));
    for (int64_t c = 0; c < u.channels; ++c) {
        std::vector<float> uc(u.values.begin() + c * hw, u.values.begin() + (c + 1) * hw);
        std::vector<float> vc(v.values.begin() + c * hw, v.values.begin() + (c + 1) * hw);
        out.push_back(vrmse(uc, vc, eps));
    }
    return out;
}

double vrmse_field(const Field& u, const Field& v, double eps) {
    const auto per = vrmse_per_channel(u, v, eps);
    double acc = 0.0;
    for (double x : per) acc += x;
    return acc / static_cast<double>(per.size());
}

Spectrum isotropic_spectrum(const std::vector<double>& u, int64_t height, int64_t width) {
    if (height != width) throw IoError("isotropic_spectrum: field must be square");
    if (static_cast<int64_t>(u.size()) != height * width) {
        throw IoError("isotropic_spectrum: size mismatch");
    }
    const int64_t n = height * width;
    std::vector<std::complex<double>> in(static_cast<size_t>(n)), out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) in[static_cast<size_t>(i)] = u[static_cast<size_t>(i)];
    {
        fftw_plan plan;
        {
            std::lock_guard<std::mutex> lock(fftw_plan_mutex());
            plan = fftw_plan_dft_2d(static_cast<int>(height), static_cast<int>(width),
                                    reinterpret_cast<fftw_complex*>(in.data()),
                                    reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                                    FFTW_ESTIMATE);
        }
        fftw_execute(plan);
        std::lock_guard<std::mutex> lock(fftw_plan_mutex());
        fftw_destroy_plan(plan);
    }
    Spectrum s;
    s.power.assign(static_cast<size_t>(height / 2), 0.0);
    const double scale = 1.0 / static_cast<double>(n);
    for (int64_t y = 0; y < height; ++y) {
        const int64_t ky = freq(y, height);
        for (int64_t x = 0; x < width; ++x) {
            const int64_t kx = freq(x, width);
            const double p = std::norm(out[static_cast<size_t>(y * width + x)]) * scale;
            if (kx == 0 && ky == 0) {
                s.dc += p;
                continue;
            }
            const double r = std::sqrt(static_cast<double>(kx * kx + ky * ky));
            const int64_t bin = static_cast<int64_t>(std::floor(r + 0.5));  // k-1/2 <= r < k+1/2
            if (bin >= 1 && bin <= height / 2) s.power[static_cast<size_t>(bin - 1)] += p;
        }
    }
    return s;
}

Spectrum isotropic_spectrum_padded(const std::vector<double>& u, int64_t height, int64_t width) {
    if (height == width) return isotropic_spectrum(u, height, width);
    const int64_t side = std::max(height, width);
    std::vector<double> padded(static_cast<size_t>(side * side), 0.0);
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            padded[static_cast<size_t>(y * side + x)] = u[static_cast<size_t>(y * width + x)];
        }
    }
    return isotropic_spectrum(padded, side, side);
}

Spectrum isotropic_spectrum_channel(const Field& f, int64_t channel) {
    const int64_t hw = f.height * f.width;
    std::vector<double> u(static_cast<size_t>(hw));
    for (int64_t i = 0; i < hw; ++i) {
        u[static_cast<size_t>(i)] = f.values[static_cast<size_t>(channel * hw + i)];
    }
    return isotropic_spectrum_padded(u, f.height, f.width);
}

int band_of(int64_t k, int64_t k_max) {
    const double e1 = std::pow(static_cast<double>(k_max), 1.0 / 3.0);
    const double e2 = std::pow(static_cast<double>(k_max), 2.0 / 3.0);
    if (static_cast<double>(k) < e1) return 0;
    if (static_cast<double>(k) < e2) return 1;
    return 2;
}

std::array<double, 3> spectrum_band_rmse(const std::vector<double>& p_u,
                                         const std::vector<double>& p_v) {
    if (p_u.size() != p_v.size() || p_u.empty()) {
        throw IoError("spectrum_band_rmse: size mismatch");
    }
    const int64_t k_max = static_cast<int64_t>(p_u.size());
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    std::array<int64_t, 3> count{0, 0, 0};
    for (int64_t k = 1; k <= k_max; ++k) {
        const double pu = std::max(p_u[static_cast<size_t>(k - 1)], 1e-12);
        const double rel = p_v[static_cast<size_t>(k - 1)] / pu - 1.0;
        const int b = band_of(k, k_max);
        acc[static_cast<size_t>(b)] += rel * rel;
        count[static_cast<size_t>(b)] += 1;
    }
    std::array<double, 3> out{0.0, 0.0, 0.0};
    for (int b = 0; b < 3; ++b) {
        if (count[static_cast<size_t>(b)] > 0) {
            out[static_cast<size_t>(b)] =
                std::sqrt(acc[static_cast<size_t>(b)] /
                          static_cast<double>(count[static_cast<size_t>(b)]));
        }
    }
    return out;
}

SpreadSkill spread_skill(const std::vector<float>& truth,
                         const std::vector<const std::vector<float>*>& members) {
    const size_t k = members.size();
    if (k == 0) throw IoError("spread_skill: no ensemble members");
    for (const auto* m : members) {
        if (m->size() != truth.size()) throw IoError("spread_skill: member size mismatch");
    }
    const double n = static_cast<double>(truth.size());

    double mse_mean = 0.0;
    double var_mean = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        double mean = 0.0;
        for (const auto* m : members) mean += (*m)[i];
        mean /= static_cast<double>(k);
        const double d = static_cast<double>(truth[i]) - mean;
        mse_mean += d * d;
        if (k > 1) {
            double ss = 0.0;
            for (const auto* m : members) {
                const double e = static_cast<double>((*m)[i]) - mean;
                ss += e * e;
            }
            var_mean += ss / static_cast<double>(k - 1);
        }
    }
    SpreadSkill out;
    out.skill = std::sqrt(mse_mean / n);
    out.spread = k > 1 ? std::sqrt(var_mean / n) : 0.0;
    if (k > 1 && out.skill > 1e-12) {
        out.ratio = std::sqrt(static_cast<double>(k + 1) / static_cast<double>(k)) * out.spread /
                    out.skill;
        out.ratio_defined = true;
    }
    return out;
}

std::string HorizonWindow::label() const {
    return std::to_string(begin) + ":" + std::to_string(end);
}

double horizon_mean(const std::vector<double>& per_lead_values,
                    const std::vector<int64_t>& lead_times, const HorizonWindow& w) {
    if (per_lead_values.size() != lead_times.size()) throw IoError("horizon_mean: size mismatch");
    double acc = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < lead_times.size(); ++i) {
        if (lead_times[i] >= w.begin && lead_times[i] <= w.end) {
            acc += per_lead_values[i];
            ++count;
        }
    }
    if (count == 0) throw IoError("horizon_mean: empty window " + w.label());
    return acc / static_cast<double>(count);
}

}  // namespace latemu

#include "latemu/generators.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>

#include "latemu/rng.hpp"

namespace latemu {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}

struct FftPlan {
    fftw_plan plan;
    FftPlan(int64_t h, int64_t w, fftw_complex* in, fftw_complex* out, int sign) {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), in, out, sign,
                                FFTW_ESTIMATE);
    }
    ~FftPlan() {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        fftw_destroy_plan(plan);
    }
};

// signed integer frequency of index i on an n-point grid
inline int64_t freq(int64_t i, int64_t n) { return i <= n / 2 ? i : i - n; }

std::vector<std::complex<double>> fft2(const std::vector<double>& real_field, int64_t h,
                                       int64_t w) {
    std::vector<std::complex<double>> in(static_cast<size_t>(h * w));
    std::vector<std::complex<double>> out(static_cast<size_t>(h * w));
    for (size_t i = 0; i < in.size(); ++i) in[i] = real_field[i];
    FftPlan plan(h, w, reinterpret_cast<fftw_complex*>(in.data()),
                 reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD);
    fftw_execute(plan.plan);
    return out;
}

std::vector<double> ifft2_real(const std::vector<std::complex<double>>& spectrum, int64_t h,
                               int64_t w) {
    std::vector<std::complex<double>> in(spectrum);
    std::vector<std::complex<double>> out(in.size());
    FftPlan plan(h, w, reinterpret_cast<fftw_complex*>(in.data()),
                 reinterpret_cast<fftw_complex*>(out.data()), FFTW_BACKWARD);
    fftw_execute(plan.plan);
    std::vector<double> real_out(out.size());
    const double scale = 1.0 / static_cast<double>(h * w);
    for (size_t i = 0; i < out.size(); ++i) real_out[i] = out[i].real() * scale;
    return real_out;
}

}  // namespace

SpectralAdvection::SpectralAdvection(std::vector<double> u0, int64_t height, int64_t width,
                                     double vx, double vy, double nu)
    : h_(height), w_(width), vx_(vx), vy_(vy), nu_(nu) {
    if (nu < 0.0) throw IoError("advection: diffusivity must be non-negative");
    if (static_cast<int64_t>(u0.size()) != h_ * w_) {
        throw IoError("advection: initial state size mismatch");
    }
    u0_hat_ = fft2(u0, h_, w_);
}

std::vector<double> SpectralAdvection::state_at(double t) const {
    std::vector<std::complex<double>> hat(u0_hat_.size());
    for (int64_t y = 0; y < h_; ++y) {
        const int64_t ky = freq(y, h_);
        for (int64_t x = 0; x < w_; ++x) {
            const int64_t kx = freq(x, w_);
            const double phase = -kTwoPi * (static_cast<double>(kx) * vx_ / static_cast<double>(w_) +
                                            static_cast<double>(ky) * vy_ / static_cast<double>(h_)) *
                                 t;
            const double decay = std::exp(-nu_ * static_cast<double>(kx * kx + ky * ky) * t);
            hat[static_cast<size_t>(y * w_ + x)] =
                u0_hat_[static_cast<size_t>(y * w_ + x)] *
                std::polar(decay, phase);
        }
    }
    return ifft2_real(hat, h_, w_);
}

std::vector<double> SpectralAdvection::derived_at(double t) const {
    std::vector<std::complex<double>> hat(u0_hat_.size());
    const std::complex<double> im(0.0, 1.0);
    for (int64_t y = 0; y < h_; ++y) {
        const int64_t ky = freq(y, h_);
        for (int64_t x = 0; x < w_; ++x) {
            const int64_t kx = freq(x, w_);
            const double phase = -kTwoPi * (static_cast<double>(kx) * vx_ / static_cast<double>(w_) +
                                            static_cast<double>(ky) * vy_ / static_cast<double>(h_)) *
                                 t;
            const double decay = std::exp(-nu_ * static_cast<double>(kx * kx + ky * ky) * t);
            const std::complex<double> deriv =
                im * kTwoPi *
                (static_cast<double>(kx) / static_cast<double>(w_) -
                 static_cast<double>(ky) / static_cast<double>(h_));
            hat[static_cast<size_t>(y * w_ + x)] = u0_hat_[static_cast<size_t>(y * w_ + x)] *
                                                   deriv * std::polar(decay, phase);
        }
    }
    return ifft2_real(hat, h_, w_);
}

Trajectory gen_advection(const AdvectionParams& p) {
    Rng rng(derive_seed(p.seed, "advection-ic"));
    const int64_t n = p.height * p.width;

    // Power-law random initial condition: shape white noise in Fourier space.
    std::vector<double> white(static_cast<size_t>(n));
    for (auto& v : white) v = rng.normal();
    auto hat = fft2(white, p.height, p.width);
    for (int64_t y = 0; y < p.height; ++y) {
        const int64_t ky = freq(y, p.height);
        for (int64_t x = 0; x < p.width; ++x) {
            const int64_t kx = freq(x, p.width);
            const double r = std::sqrt(static_cast<double>(kx * kx + ky * ky));
            hat[static_cast<size_t>(y * p.width + x)] *= std::pow(1.0 + r, -p.ic_power);
        }
    }
    hat[0] = 0.0;
    auto u0 = ifft2_real(hat, p.height, p.width);
    double ss = 0.0;
    for (double v : u0) ss += v * v;
    const double scale = 1.0 / std::sqrt(ss / static_cast<double>(n) + 1e-300);
    const double mean_offset = rng.normal() * p.ic_mean_std;
    for (auto& v : u0) v = v * scale + mean_offset;

    SpectralAdvection solver(u0, p.height, p.width, p.vx, p.vy, p.nu);

    Trajectory traj;
    traj.theta = {static_cast<float>(p.vx), static_cast<float>(p.vy), static_cast<float>(p.nu),
                  1.0f};  // trailing one-hot: periodic boundary
    traj.stride = p.stride;
    traj.boundary = Boundary::Periodic;
    traj.channel_names = {"u", "omega"};
    traj.channel_transforms = {"identity", "identity"};
    traj.seed = p.seed;
    traj.fields.reserve(static_cast<size_t>(p.frames + 1));
    for (int64_t i = 0; i <= p.frames; ++i) {
        const double t = static_cast<double>(i) * p.stride;
        Field f(2, p.height, p.width);
        const auto u = solver.state_at(t);
        const auto w = solver.derived_at(t);
        for (int64_t j = 0; j < n; ++j) {
            f.values[static_cast<size_t>(j)] = static_cast<float>(u[static_cast<size_t>(j)]);
            f.values[static_cast<size_t>(n + j)] = static_cast<float>(w[static_cast<size_t>(j)]);
        }
        traj.fields.push_back(std::move(f));
    }
    traj.validate();
    return traj;
}

Trajectory gen_grayscott(const GrayScottParams& p) {
    const double stability = p.dt * std::max(p.du, p.dv) * 4.0;  // dx = 1
    if (!(stability < 1.0)) {
        throw IoError("gray-scott: explicit stability violated (dt*maxD*4 = " +
                      std::to_string(stability) + " >= 1)");
    }
    const int64_t h = p.height, w = p.width, n = h * w;
    Rng rng(derive_seed(p.seed, "grayscott-ic"));

    std::vector<double> u(static_cast<size_t>(n), 1.0);
    std::vector<double> v(static_cast<size_t>(n), 0.0);
    for (int b = 0; b < p.blob_count; ++b) {
        const int64_t cy = rng.uniform_int(0, h - 1);
        const int64_t cx = rng.uniform_int(0, w - 1);
        for (int64_t dy = -3; dy <= 3; ++dy) {
            for (int64_t dx = -3; dx <= 3; ++dx) {
                const int64_t y = (cy + dy + h) % h;
                const int64_t x = (cx + dx + w) % w;
                u[static_cast<size_t>(y * w + x)] = 0.5 + 0.02 * (rng.uniform() - 0.5);
                v[static_cast<size_t>(y * w + x)] = 0.25 + 0.02 * (rng.uniform() - 0.5);
            }
        }
    }

    auto store_frame = [&](Trajectory& traj) {
        Field f(2, h, w);
        for (int64_t j = 0; j < n; ++j) {
            f.values[static_cast<size_t>(j)] = static_cast<float>(u[static_cast<size_t>(j)]);
            f.values[static_cast<size_t>(n + j)] = static_cast<float>(v[static_cast<size_t>(j)]);
        }
        traj.fields.push_back(std::move(f));
    };

    Trajectory traj;
    traj.theta = {static_cast<float>(p.feed), static_cast<float>(p.kill)};
    traj.stride = p.substeps;
    traj.boundary = Boundary::Periodic;
    traj.channel_names = {"u", "v"};
    traj.channel_transforms = {"log1p", "log1p"};
    traj.seed = p.seed;
    store_frame(traj);

    std::vector<double> lu(static_cast<size_t>(n)), lv(static_cast<size_t>(n));
    int64_t total_step = 0;
    for (int64_t frame = 1; frame <= p.frames; ++frame) {
        for (int s = 0; s < p.substeps; ++s, ++total_step) {
            for (int64_t y = 0; y < h; ++y) {
                const int64_t up = (y + h - 1) % h, dn = (y + 1) % h;
                for (int64_t x = 0; x < w; ++x) {
                    const int64_t lt = (x + w - 1) % w, rt = (x + 1) % w;
                    const size_t i = static_cast<size_t>(y * w + x);
                    lu[i] = u[static_cast<size_t>(up * w + x)] + u[static_cast<size_t>(dn * w + x)] +
                            u[static_cast<size_t>(y * w + lt)] + u[static_cast<size_t>(y * w + rt)] -
                            4.0 * u[i];
                    lv[i] = v[static_cast<size_t>(up * w + x)] + v[static_cast<size_t>(dn * w + x)] +
                            v[static_cast<size_t>(y * w + lt)] + v[static_cast<size_t>(y * w + rt)] -
                            4.0 * v[i];
                }
            }
            for (int64_t j = 0; j < n; ++j) {
                const size_t i = static_cast<size_t>(j);
                const double uv2 = u[i] * v[i] * v[i];
                u[i] += p.dt * (p.du * lu[i] - uv2 + p.feed * (1.0 - u[i]));
                v[i] += p.dt * (p.dv * lv[i] + uv2 - (p.feed + p.kill) * v[i]);
            }
        }
        for (int64_t j = 0; j < n; ++j) {
            if (!std::isfinite(u[static_cast<size_t>(j)]) ||
                !std::isfinite(v[static_cast<size_t>(j)])) {
                throw NonFiniteError("gray-scott: instability at solver step " +
                                     std::to_string(total_step) + " (frame " +
                                     std::to_string(frame) + ")");
            }
        }
        store_frame(traj);
    }
    traj.validate();
    return traj;
}

}  // namespace latemu

#include "latemu/sampler.hpp"

#include <cmath>

namespace latemu {

namespace {

void axpy(std::vector<double>& z, double a, const std::vector<double>& f) {
    for (size_t i = 0; i < z.size(); ++i) z[i] += a * f[i];
}

void check_finite(const std::vector<double>& z, double t) {
    for (double v : z) {
        if (!std::isfinite(v)) {
            throw NonFiniteError("ode integration: non-finite state at t=" + std::to_string(t));
        }
    }
}

}  // namespace

std::vector<double> multistep_integrate(const OdeRhs& rhs, std::vector<double> z, double t_from,
                                        double t_to, int64_t n_intervals, OdeMethod method) {
    if (n_intervals < 1) throw ShapeError("multistep_integrate: need at least one interval");
    const double h = (t_to - t_from) / static_cast<double>(n_intervals);

    if (method == OdeMethod::Euler) {
        for (int64_t k = 0; k < n_intervals; ++k) {
            const double t = t_from + h * static_cast<double>(k);
            axpy(z, h, rhs(z, t));
            check_finite(z, t);
        }
        return z;
    }

    std::vector<double> f_prev2, f_prev1;
    for (int64_t k = 0; k < n_intervals; ++k) {
        const double t = t_from + h * static_cast<double>(k);
        if (k == 0) {
            std::vector<double> f0 = rhs(z, t);
            if (n_intervals == 1) {
                axpy(z, h, f0);
                check_finite(z, t);
                return z;
            }
            // Euler predictor, trapezoidal corrector; the predictor-stage
            // derivative becomes the t_1 history entry (no extra rhs call
            // at node 1).
            std::vector<double> z_pred = z;
            axpy(z_pred, h, f0);
            std::vector<double> f1_star = rhs(z_pred, t + h);
            axpy(z, 0.5 * h, f0);
            axpy(z, 0.5 * h, f1_star);
            f_prev2 = std::move(f0);
            f_prev1 = std::move(f1_star);
            ++k;  // node 1 is already consumed
            check_finite(z, t);
            if (k >= n_intervals) return z;
            const double t1 = t_from + h * static_cast<double>(k);
            axpy(z, 1.5 * h, f_prev1);
            axpy(z, -0.5 * h, f_prev2);
            check_finite(z, t1);
        } else {
            std::vector<double> fk = rhs(z, t);
            axpy(z, h * 23.0 / 12.0, fk);
            axpy(z, -h * 16.0 / 12.0, f_prev1);
            axpy(z, h * 5.0 / 12.0, f_prev2);
            f_prev2 = std::move(f_prev1);
            f_prev1 = std::move(fk);
            check_finite(z, t);
        }
    }
    return z;
}

double empirical_order(const std::vector<int64_t>& step_counts, const std::vector<double>& errors) {
    if (step_counts.size() != errors.size() || step_counts.size() < 2) {
        throw ShapeError("empirical_order: need matched samples");
    }
    const size_t n = step_counts.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double x = -std::log(static_cast<double>(step_counts[i]));  // log h up to a constant
        const double y = std::log(errors[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = static_cast<double>(n) * sxx - sx * sx;
    return (static_cast<double>(n) * sxy - sx * sy) / denom;
}

std::vector<double> pf_ode_rhs(const RectifiedFlow& sched, const DenoiseFn& denoise,
                               const std::vector<double>& z_t, double t,
                               const std::vector<uint8_t>& known_elem) {
    if (!(t > 0.0)) throw ShapeError("pf_ode_rhs: t must be positive");
    if (!known_elem.empty() && known_elem.size() != z_t.size()) {
        throw ShapeError("pf_ode_rhs: known-element mask size mismatch");
    }
    std::vector<float> z32(z_t.size());
    for (size_t i = 0; i < z_t.size(); ++i) z32[i] = static_cast<float>(z_t[i]);
    const std::vector<float> d = denoise(z32, t);
    if (d.size() != z_t.size()) throw ShapeError("pf_ode_rhs: denoiser output size mismatch");

    const double a = RectifiedFlow::alpha(t);
    const double s2 = RectifiedFlow::sigma(t) * RectifiedFlow::sigma(t);
    const double f = sched.drift(t);
    const double g2 = sched.diffusion_sq(t);
    std::vector<double> out(z_t.size());
    for (size_t i = 0; i < z_t.size(); ++i) {
        if (!known_elem.empty() && known_elem[i]) {
            out[i] = 0.0;
            continue;
        }
        const double score = (a * d[i] - z_t[i]) / s2;
        out[i] = f * z_t[i] - 0.5 * g2 * score;
    }
    return out;
}

PfOdeResult sample_pf_ode(const RectifiedFlow& sched, const DenoiseFn& denoise,
                          const std::vector<float>& init_state,
                          const std::vector<uint8_t>& known_elem, int64_t n_steps,
                          OdeMethod method) {
    if (n_steps < 3) throw ShapeError("sample_pf_ode: need at least 3 steps");
    if (!known_elem.empty() && known_elem.size() != init_state.size()) {
        throw ShapeError("sample_pf_ode: known-element mask size mismatch");
    }
    PfOdeResult result;
    std::vector<double> z(init_state.begin(), init_state.end());

    auto counted = [&](const std::vector<float>& zf, double t) {
        ++result.denoiser_calls;
        return denoise(zf, t);
    };
    OdeRhs rhs = [&](const std::vector<double>& state, double t) {
        return pf_ode_rhs(sched, counted, state, t, known_elem);
    };
    // Start at the clamp boundary: at t=1 exactly, f_t and g_t^2 are
    // individually singular and their clamped forms no longer cancel.
    const double t_start = 1.0 - sched.clamp_hi;
    z = multistep_integrate(rhs, std::move(z), t_start, sched.t_min, n_steps - 1, method);

    // terminal denoising step: jump from t_min to the posterior mean
    std::vector<float> z32(z.size());
    for (size_t i = 0; i < z.size(); ++i) z32[i] = static_cast<float>(z[i]);
    std::vector<float> z0 = counted(z32, sched.t_min);
    if (z0.size() != init_state.size()) throw ShapeError("sample_pf_ode: denoiser size mismatch");
    for (size_t i = 0; i < z0.size(); ++i) {
        if (!known_elem.empty() && known_elem[i]) z0[i] = init_state[i];
        if (!std::isfinite(z0[i])) throw NonFiniteError("sample_pf_ode: non-finite sample");
    }
    result.z0 = std::move(z0);
    return result;
}

}  // namespace latemu

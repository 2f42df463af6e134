#pragma once

#include <functional>

#include "latemu/diffusion.hpp"

namespace latemu {

enum class OdeMethod { Euler, AB3 };

using OdeRhs = std::function<std::vector<double>(const std::vector<double>&, double)>;

// Explicit multistep integration on the uniform grid from t_from to t_to in
// n_intervals steps, with exactly n_intervals rhs evaluations.
//
// AB3 startup: the first step is an Euler predictor with a trapezoidal
// correction; the predictor-stage derivative is kept as the t_1 history
// entry (it differs from the nodal derivative by O(h^2), which perturbs the
// following steps at O(h^3)). A plain Euler first step would cap the global
// order at 2. The second step is two-step Adams-Bashforth, then
// (23/12, -16/12, 5/12).
std::vector<double> multistep_integrate(const OdeRhs& rhs, std::vector<double> z, double t_from,
                                        double t_to, int64_t n_intervals, OdeMethod method);

// Least-squares slope of log(error) vs log(1/steps); used by convergence tests.
double empirical_order(const std::vector<int64_t>& step_counts,
                       const std::vector<double>& errors);

// One denoiser evaluation on a flat bundle buffer at diffusion time t.
using DenoiseFn = std::function<std::vector<float>(const std::vector<float>&, double)>;

// Probability-flow derivative f_t z - 1/2 g_t^2 score with the score from
// the Tweedie inversion of one denoiser call; known elements get a zero
// derivative so conditioning frames never move.
std::vector<double> pf_ode_rhs(const RectifiedFlow& sched, const DenoiseFn& denoise,
                               const std::vector<double>& z_t, double t,
                               const std::vector<uint8_t>& known_elem);

struct PfOdeResult {
    std::vector<float> z0;
    int64_t denoiser_calls = 0;
};

// Integrate from t=1 down to t_min in n_steps-1 multistep intervals, then
// replace the last leg with one terminal denoising step E[z|z_tmin]:
// exactly n_steps denoiser evaluations per sample. init_state supplies the
// clean values at known elements (passed through bit-identically) and the
// Gaussian draw at unknown elements. Throws on a non-finite state.
PfOdeResult sample_pf_ode(const RectifiedFlow& sched, const DenoiseFn& denoise,
                          const std::vector<float>& init_state,
                          const std::vector<uint8_t>& known_elem, int64_t n_steps,
                          OdeMethod method);

}  // namespace latemu

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "latemu/diffusion.hpp"
#include "latemu/generators.hpp"
#include "latemu/metrics.hpp"
#include "latemu/sampler.hpp"

namespace py = pybind11;
using namespace latemu;

namespace {

std::vector<float> to_vec(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    return std::vector<float>(a.data(), a.data() + a.size());
}

std::vector<double> to_vec64(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    return std::vector<double>(a.data(), a.data() + a.size());
}

py::array_t<float> traj_to_array(const Trajectory& t) {
    const auto& f0 = t.fields[0];
    py::array_t<float> out({static_cast<py::ssize_t>(t.fields.size()),
                            static_cast<py::ssize_t>(f0.channels),
                            static_cast<py::ssize_t>(f0.height),
                            static_cast<py::ssize_t>(f0.width)});
    float* dst = out.mutable_data();
    for (const auto& f : t.fields) {
        std::copy(f.values.begin(), f.values.end(), dst);
        dst += f.values.size();
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_latemu, m) {
    m.doc() = "latent-space emulation laboratory: core operations";
    m.attr("__version__") = "0.1.0";

    m.def(
        "saturate",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> x, float bound) {
            Tensor t = Tensor::from_data({static_cast<int64_t>(x.size())}, to_vec(x));
            Tensor y = ops::saturate(t, bound);
            py::array_t<float> out(x.request().shape);
            std::copy(y.data().begin(), y.data().end(), out.mutable_data());
            return out;
        },
        py::arg("x"), py::arg("bound") = 5.0f,
        "Bounded latent squashing z / sqrt(1 + z^2/B^2)");

    m.def("schedule_alpha", &RectifiedFlow::alpha, py::arg("t"));
    m.def("schedule_sigma", &RectifiedFlow::sigma, py::arg("t"));
    m.def(
        "schedule_drift", [](double t) { return RectifiedFlow{}.drift(t); }, py::arg("t"));
    m.def(
        "schedule_diffusion_sq", [](double t) { return RectifiedFlow{}.diffusion_sq(t); },
        py::arg("t"));

    m.def(
        "denoiser_to_score",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> d,
           py::array_t<float, py::array::c_style | py::array::forcecast> z_t, double t) {
            std::vector<float> score;
            denoiser_to_score(to_vec(d), to_vec(z_t), t, score);
            py::array_t<float> out(static_cast<py::ssize_t>(score.size()));
            std::copy(score.begin(), score.end(), out.mutable_data());
            return out;
        },
        py::arg("denoised"), py::arg("z_t"), py::arg("t"));

    m.def("truncated_poisson_pmf", &truncated_poisson_pmf, py::arg("n"), py::arg("lam"));
    m.def(
        "sample_mask",
        [](int64_t n, double lam, double flip_prob, uint64_t seed) {
            Rng rng(seed);
            Mask mask = sample_mask(n, lam, flip_prob, rng);
            return std::vector<int>(mask.bits.begin(), mask.bits.end());
        },
        py::arg("n"), py::arg("lam") = 2.0, py::arg("flip_prob") = 0.33, py::arg("seed") = 0);

    m.def(
        "vrmse",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> u,
           py::array_t<float, py::array::c_style | py::array::forcecast> v, double eps) {
            return vrmse(to_vec(u), to_vec(v), eps);
        },
        py::arg("u"), py::arg("v"), py::arg("eps") = 1e-6);

    m.def(
        "isotropic_spectrum",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> u) {
            if (u.ndim() != 2) throw py::value_error("expected a 2d field");
            Spectrum s = isotropic_spectrum_padded(to_vec64(u), u.shape(0), u.shape(1));
            py::array_t<double> power(static_cast<py::ssize_t>(s.power.size()));
            std::copy(s.power.begin(), s.power.end(), power.mutable_data());
            return py::make_tuple(power, s.dc);
        },
        py::arg("u"), "Power per integer wavenumber bin plus the DC mass");

    m.def(
        "spectrum_band_rmse",
        [](std::vector<double> pu, std::vector<double> pv) {
            auto b = spectrum_band_rmse(pu, pv);
            return py::make_tuple(b[0], b[1], b[2]);
        },
        py::arg("p_u"), py::arg("p_v"));

    m.def(
        "spread_skill",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> truth,
           py::array_t<float, py::array::c_style | py::array::forcecast> members) {
            if (members.ndim() != 2) throw py::value_error("members must be [K, N]");
            const auto k = members.shape(0);
            const auto n = members.shape(1);
            std::vector<std::vector<float>> rows(static_cast<size_t>(k));
            std::vector<const std::vector<float>*> ptrs;
            for (py::ssize_t i = 0; i < k; ++i) {
                rows[static_cast<size_t>(i)] =
                    std::vector<float>(members.data() + i * n, members.data() + (i + 1) * n);
                ptrs.push_back(&rows[static_cast<size_t>(i)]);
            }
            SpreadSkill ss = spread_skill(to_vec(truth), ptrs);
            py::dict out;
            out["skill"] = ss.skill;
            out["spread"] = ss.spread;
            out["ratio"] = ss.ratio_defined ? py::object(py::float_(ss.ratio)) : py::none();
            return out;
        },
        py::arg("truth"), py::arg("members"));

    m.def(
        "gen_advection",
        [](double vx, double vy, double nu, int64_t h, int64_t w, int64_t frames, int stride,
           double ic_power, uint64_t seed) {
            AdvectionParams p;
            p.vx = vx;
            p.vy = vy;
            p.nu = nu;
            p.height = h;
            p.width = w;
            p.frames = frames;
            p.stride = stride;
            p.ic_power = ic_power;
            p.seed = seed;
            Trajectory t = gen_advection(p);
            return py::make_tuple(traj_to_array(t), t.theta);
        },
        py::arg("vx") = 1.0, py::arg("vy") = 0.0, py::arg("nu") = 0.0, py::arg("h") = 32,
        py::arg("w") = 32, py::arg("frames") = 8, py::arg("stride") = 4,
        py::arg("ic_power") = 1.8, py::arg("seed") = 0,
        "Exact spectral advection-diffusion trajectory [frames+1, 2, H, W]");

    m.def(
        "gen_grayscott",
        [](double feed, double kill, int64_t h, int64_t w, int64_t frames, int substeps,
           uint64_t seed) {
            GrayScottParams p;
            p.feed = feed;
            p.kill = kill;
            p.height = h;
            p.width = w;
            p.frames = frames;
            p.substeps = substeps;
            p.seed = seed;
            Trajectory t = gen_grayscott(p);
            return py::make_tuple(traj_to_array(t), t.theta);
        },
        py::arg("feed") = 0.035, py::arg("kill") = 0.06, py::arg("h") = 32, py::arg("w") = 32,
        py::arg("frames") = 8, py::arg("substeps") = 40, py::arg("seed") = 0);

    m.def(
        "gaussian_sample_ab3",
        [](int64_t samples, int64_t dim, int64_t steps, uint64_t seed) {
            RectifiedFlow sched;
            auto denoise = [](const std::vector<float>& z_t, double t) {
                const double a = RectifiedFlow::alpha(t);
                const double s = RectifiedFlow::sigma(t);
                const double var = a * a + s * s;
                std::vector<float> d(z_t.size());
                for (size_t i = 0; i < z_t.size(); ++i) {
                    d[i] = static_cast<float>(a * z_t[i] / var);
                }
                return d;
            };
            Rng rng(seed);
            std::vector<float> init(static_cast<size_t>(samples * dim));
            for (auto& v : init) v = rng.normal();
            auto result = sample_pf_ode(sched, denoise, init, {}, steps, OdeMethod::AB3);
            return py::array_t<float>({static_cast<py::ssize_t>(samples),
                                       static_cast<py::ssize_t>(dim)},
                                      result.z0.data());
        },
        py::arg("samples") = 1000, py::arg("dim") = 8, py::arg("steps") = 16, py::arg("seed") = 0,
        "Probability-flow sampling against the closed-form N(0,I) denoiser");
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "latemu/metrics.hpp"
#include "latemu/rng.hpp"

using namespace latemu;

TEST_CASE("vrmse: hand values and invariances") {
    CHECK(vrmse({1.0f, 3.0f}, {1.0f, 3.0f}) == 0.0);

    // constant-mean predictor scores ~1
    Rng rng(1);
    std::vector<float> u(4096);
    for (auto& x : u) x = rng.normal() * 3.0f + 1.0f;
    double mean = 0.0;
    for (float x : u) mean += x;
    mean /= static_cast<double>(u.size());
    std::vector<float> v(u.size(), static_cast<float>(mean));
    CHECK(vrmse(u, v) == doctest::Approx(1.0).epsilon(1e-4));

    // u=[1,3], v=[2,2] -> sqrt(1/(1+1e-6))
    CHECK(vrmse({1.0f, 3.0f}, {2.0f, 2.0f}) == doctest::Approx(0.9999995).epsilon(1e-7));

    // invariant to a joint constant shift, and to a joint rescaling
    std::vector<float> us(u.size()), vs(u.size()), u2(u.size()), v2(u.size());
    for (size_t i = 0; i < u.size(); ++i) {
        const float w = rng.normal();
        us[i] = u[i] + 7.5f;
        vs[i] = v[i] + 7.5f;
        u2[i] = u[i] * 4.0f;
        v2[i] = (v[i] + w * 0.1f) * 4.0f;
    }
    CHECK(vrmse(us, vs) == doctest::Approx(vrmse(u, v)).epsilon(1e-5));
    std::vector<float> v_half(u.size());
    for (size_t i = 0; i < u.size(); ++i) v_half[i] = v2[i] / 4.0f;
    CHECK(vrmse(u2, v2) == doctest::Approx(vrmse(u, v_half)).epsilon(2e-3));
}

TEST_CASE("isotropic spectrum: single mode lands in its bin") {
    const int64_t h = 32;
    std::vector<double> u(static_cast<size_t>(h * h));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < h; ++x) {
            u[static_cast<size_t>(y * h + x)] = std::cos(2.0 * M_PI * 3.0 * x / h);
        }
    }
    Spectrum s = isotropic_spectrum(u, h, h);
    for (int64_t k = 1; k <= h / 2; ++k) {
        if (k == 3) {
            CHECK(s.power[static_cast<size_t>(k - 1)] > 0.0);
        } else {
            CHECK(s.power[static_cast<size_t>(k - 1)] == doctest::Approx(0.0).epsilon(1e-9));
        }
    }
    CHECK(s.dc == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("isotropic spectrum: Parseval identity on band-limited fields") {
    const int64_t h = 32;
    Rng rng(5);
    // build a field with content strictly inside the Nyquist disk so every
    // mode falls into some bin
    std::vector<double> u(static_cast<size_t>(h * h), 0.0);
    for (int mode = 0; mode < 12; ++mode) {
        const int kx = static_cast<int>(rng.uniform_int(-9, 9));
        const int ky = static_cast<int>(rng.uniform_int(-9, 9));
        const double a = rng.normal();
        const double ph = rng.uniform() * 2.0 * M_PI;
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < h; ++x) {
                u[static_cast<size_t>(y * h + x)] +=
                    a * std::cos(2.0 * M_PI * (kx * x + ky * y) / static_cast<double>(h) + ph);
            }
        }
    }
    double mean_sq = 0.0;
    for (double v : u) mean_sq += v * v;
    mean_sq /= static_cast<double>(h * h);

    Spectrum s = isotropic_spectrum(u, h, h);
    double total = s.dc;
    for (double p : s.power) total += p;
    CHECK(total == doctest::Approx(mean_sq * h * h).epsilon(1e-4));
}

TEST_CASE("isotropic spectrum: white noise is flat per annulus mode count") {
    const int64_t h = 32;
    const int trials = 200;
    std::vector<double> mean_power(static_cast<size_t>(h / 2), 0.0);
    Rng rng(9);
    for (int t = 0; t < trials; ++t) {
        std::vector<double> u(static_cast<size_t>(h * h));
        for (auto& v : u) v = rng.normal();
        Spectrum s = isotropic_spectrum(u, h, h);
        for (size_t i = 0; i < mean_power.size(); ++i) mean_power[i] += s.power[i];
    }
    // count modes per annulus
    std::vector<double> counts(static_cast<size_t>(h / 2), 0.0);
    for (int64_t y = 0; y < h; ++y) {
        const int64_t ky = y <= h / 2 ? y : y - h;
        for (int64_t x = 0; x < h; ++x) {
            const int64_t kx = x <= h / 2 ? x : x - h;
            if (kx == 0 && ky == 0) continue;
            const double r = std::sqrt(static_cast<double>(kx * kx + ky * ky));
            const int64_t bin = static_cast<int64_t>(std::floor(r + 0.5));
            if (bin >= 1 && bin <= h / 2) counts[static_cast<size_t>(bin - 1)] += 1.0;
        }
    }
    // interior annuli only (the Nyquist ring is clipped by the square)
    for (int64_t k = 2; k <= h / 2 - 1; ++k) {
        const double per_mode =
            mean_power[static_cast<size_t>(k - 1)] / (trials * counts[static_cast<size_t>(k - 1)]);
        CHECK(per_mode == doctest::Approx(1.0).epsilon(0.05));
    }
}

TEST_CASE("spectrum band split: edges and hand-built ratios") {
    // k_max=32: edges 32^(1/3)=3.17, 32^(2/3)=10.08 -> bands 1-3, 4-10, 11-32
    CHECK(band_of(1, 32) == 0);
    CHECK(band_of(3, 32) == 0);
    CHECK(band_of(4, 32) == 1);
    CHECK(band_of(10, 32) == 1);
    CHECK(band_of(11, 32) == 2);
    CHECK(band_of(32, 32) == 2);

    std::vector<double> pu(32, 2.0);
    CHECK(spectrum_band_rmse(pu, pu) == std::array<double, 3>{0.0, 0.0, 0.0});

    std::vector<double> pv = pu;
    for (int64_t k = 11; k <= 32; ++k) pv[static_cast<size_t>(k - 1)] = 4.0;  // 2x in high band
    auto bands = spectrum_band_rmse(pu, pv);
    CHECK(bands[0] == 0.0);
    CHECK(bands[1] == 0.0);
    CHECK(bands[2] == doctest::Approx(1.0));
}

TEST_CASE("spectrum is invariant to spatial translation") {
    const int64_t h = 32;
    Rng rng(13);
    std::vector<double> u(static_cast<size_t>(h * h));
    for (auto& v : u) v = rng.normal();
    std::vector<double> shifted(u.size());
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < h; ++x) {
            shifted[static_cast<size_t>(((y + 5) % h) * h + (x + 11) % h)] =
                u[static_cast<size_t>(y * h + x)];
        }
    }
    Spectrum a = isotropic_spectrum(u, h, h);
    Spectrum b = isotropic_spectrum(shifted, h, h);
    for (size_t i = 0; i < a.power.size(); ++i) {
        CHECK(a.power[i] == doctest::Approx(b.power[i]).epsilon(1e-8));
    }
    auto bands = spectrum_band_rmse(a.power, b.power);
    CHECK(bands[0] == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(bands[2] == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("non-square fields are zero-padded to square") {
    std::vector<double> u(16 * 8, 1.0);
    Spectrum s = isotropic_spectrum_padded(u, 16, 8);
    CHECK(s.power.size() == 8);  // padded to 16x16
}

TEST_CASE("spread-skill: degenerate and biased ensembles") {
    std::vector<float> truth{1.0f, 2.0f, 3.0f, 4.0f};
    std::vector<float> m1 = truth, m2 = truth;
    SpreadSkill perfect = spread_skill(truth, {&m1, &m2});
    CHECK(perfect.skill == 0.0);
    CHECK(perfect.spread == 0.0);
    CHECK_FALSE(perfect.ratio_defined);

    // members = truth + 1: biased, zero spread -> ratio far below 1
    std::vector<float> b1(truth), b2(truth);
    for (auto& v : b1) v += 1.0f;
    for (auto& v : b2) v += 1.0f;
    SpreadSkill biased = spread_skill(truth, {&b1, &b2});
    CHECK(biased.ratio_defined);
    CHECK(biased.ratio < 0.1);
    CHECK(biased.skill == doctest::Approx(1.0));
}

TEST_CASE("spread-skill: iid ensemble satisfies the corrected identity") {
    const int64_t n = 100000;
    const int k = 8;
    Rng rng(23);
    std::vector<float> truth(static_cast<size_t>(n));
    for (auto& v : truth) v = rng.normal();
    std::vector<std::vector<float>> members(static_cast<size_t>(k),
                                            std::vector<float>(static_cast<size_t>(n)));
    for (auto& m : members) {
        for (auto& v : m) v = rng.normal();
    }
    std::vector<const std::vector<float>*> ptrs;
    for (auto& m : members) ptrs.push_back(&m);
    SpreadSkill ss = spread_skill(truth, ptrs);
    REQUIRE(ss.ratio_defined);
    CHECK(ss.ratio == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("horizon aggregation") {
    std::vector<int64_t> leads{1, 2, 3, 4, 5, 6};
    std::vector<double> vals{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    CHECK(horizon_mean(vals, leads, {2, 2}) == 2.0);  // single-entry window
    const double w1 = horizon_mean(vals, leads, {1, 3});
    const double w2 = horizon_mean(vals, leads, {4, 6});
    CHECK((w1 * 3 + w2 * 3) / 6.0 == doctest::Approx(3.5));  // overall mean recoverable

    std::vector<double> constant(6, 2.5);
    CHECK(horizon_mean(constant, leads, {1, 6}) == doctest::Approx(2.5));
}

TEST_CASE("metric pipeline on truth vs itself yields the zero report") {
    Rng rng(31);
    Field f(2, 16, 16);
    for (auto& v : f.values) v = rng.normal();
    CHECK(vrmse_field(f, f) == 0.0);
    Spectrum s = isotropic_spectrum_channel(f, 0);
    auto bands = spectrum_band_rmse(s.power, s.power);
    CHECK(bands == std::array<double, 3>{0.0, 0.0, 0.0});
    SpreadSkill ss = spread_skill(f.values, {&f.values, &f.values});
    CHECK(ss.skill == 0.0);
    CHECK(ss.spread == 0.0);
}

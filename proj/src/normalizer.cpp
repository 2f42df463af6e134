#include "latemu/normalizer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace latemu {

namespace {

double fwd_transform(double v, const std::string& t) {
    return t == "log1p" ? std::log1p(v) : v;
}

double inv_transform(double v, const std::string& t) {
    return t == "log1p" ? std::expm1(v) : v;
}

}  // namespace

Field Normalizer::apply(const Field& f) const {
    if (static_cast<size_t>(f.channels) != mean.size()) {
        throw IoError("normalizer: channel count mismatch");
    }
    Field out(f.channels, f.height, f.width);
    const int64_t hw = f.height * f.width;
    for (int64_t c = 0; c < f.channels; ++c) {
        const auto& t = transforms[static_cast<size_t>(c)];
        const double mu = mean[static_cast<size_t>(c)];
        const double sd = std_dev[static_cast<size_t>(c)];
        for (int64_t i = 0; i < hw; ++i) {
            const double v = fwd_transform(f.values[static_cast<size_t>(c * hw + i)], t);
            out.values[static_cast<size_t>(c * hw + i)] = static_cast<float>((v - mu) / sd);
        }
    }
    return out;
}

Field Normalizer::invert(const Field& f) const {
    if (static_cast<size_t>(f.channels) != mean.size()) {
        throw IoError("normalizer: channel count mismatch");
    }
    Field out(f.channels, f.height, f.width);
    const int64_t hw = f.height * f.width;
    for (int64_t c = 0; c < f.channels; ++c) {
        const auto& t = transforms[static_cast<size_t>(c)];
        const double mu = mean[static_cast<size_t>(c)];
        const double sd = std_dev[static_cast<size_t>(c)];
        for (int64_t i = 0; i < hw; ++i) {
            const double v = f.values[static_cast<size_t>(c * hw + i)] * sd + mu;
            out.values[static_cast<size_t>(c * hw + i)] = static_cast<float>(inv_transform(v, t));
        }
    }
    return out;
}

std::vector<float> Normalizer::apply_theta(const std::vector<float>& theta) const {
    if (theta_mean.empty()) return theta;
    if (theta.size() != theta_mean.size()) throw IoError("normalizer: theta size mismatch");
    std::vector<float> out(theta.size());
    for (size_t i = 0; i < theta.size(); ++i) {
        out[i] = static_cast<float>((theta[i] - theta_mean[i]) / theta_std[i]);
    }
    return out;
}

Normalizer fit_normalizer(const std::vector<Trajectory>& train) {
    if (train.empty()) throw IoError("fit_normalizer: empty training set");
    const int64_t channels = train.front().fields.front().channels;

    Normalizer n;
    n.transforms = train.front().channel_transforms;
    if (n.transforms.empty()) {
        n.transforms.assign(static_cast<size_t>(channels), "identity");
    }
    if (static_cast<int64_t>(n.transforms.size()) != channels) {
        throw IoError("fit_normalizer: transform tags do not match channel count");
    }

    std::vector<double> sum(static_cast<size_t>(channels), 0.0);
    std::vector<double> sum_sq(static_cast<size_t>(channels), 0.0);
    int64_t count = 0;
    for (const auto& traj : train) {
        for (const auto& f : traj.fields) {
            const int64_t hw = f.height * f.width;
            for (int64_t c = 0; c < channels; ++c) {
                const auto& t = n.transforms[static_cast<size_t>(c)];
                for (int64_t i = 0; i < hw; ++i) {
                    const double v = fwd_transform(f.values[static_cast<size_t>(c * hw + i)], t);
                    sum[static_cast<size_t>(c)] += v;
                    sum_sq[static_cast<size_t>(c)] += v * v;
                }
            }
            count += f.height * f.width;
        }
    }
    n.mean.resize(static_cast<size_t>(channels));
    n.std_dev.resize(static_cast<size_t>(channels));
    for (int64_t c = 0; c < channels; ++c) {
        const double mu = sum[static_cast<size_t>(c)] / static_cast<double>(count);
        const double var = sum_sq[static_cast<size_t>(c)] / static_cast<double>(count) - mu * mu;
        if (!(var > 1e-12)) {
            throw IoError("fit_normalizer: zero-variance channel " + std::to_string(c));
        }
        n.mean[static_cast<size_t>(c)] = mu;
        n.std_dev[static_cast<size_t>(c)] = std::sqrt(var);
    }

    // theta statistics for emulator conditioning
    const size_t tdim = train.front().theta.size();
    n.theta_mean.assign(tdim, 0.0);
    n.theta_std.assign(tdim, 1.0);
    if (tdim > 0 && train.size() > 1) {
        std::vector<double> ts(tdim, 0.0), ts2(tdim, 0.0);
        for (const auto& traj : train) {
            for (size_t i = 0; i < tdim; ++i) {
                ts[i] += traj.theta[i];
                ts2[i] += static_cast<double>(traj.theta[i]) * traj.theta[i];
            }
        }
        for (size_t i = 0; i < tdim; ++i) {
            const double mu = ts[i] / static_cast<double>(train.size());
            const double var = ts2[i] / static_cast<double>(train.size()) - mu * mu;
            n.theta_mean[i] = mu;
            n.theta_std[i] = var > 1e-12 ? std::sqrt(var) : 1.0;
        }
    }
    return n;
}

std::string Normalizer::to_json() const {
    nlohmann::json j;
    j["mean"] = mean;
    j["std"] = std_dev;
    j["transforms"] = transforms;
    j["theta_mean"] = theta_mean;
    j["theta_std"] = theta_std;
    return j.dump(2);
}

Normalizer Normalizer::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Normalizer n;
    n.mean = j.at("mean").get<std::vector<double>>();
    n.std_dev = j.at("std").get<std::vector<double>>();
    n.transforms = j.at("transforms").get<std::vector<std::string>>();
    n.theta_mean = j.value("theta_mean", std::vector<double>{});
    n.theta_std = j.value("theta_std", std::vector<double>{});
    return n;
}

void Normalizer::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("normalizer: cannot write '" + path + "'");
    os << to_json() << "\n";
}

Normalizer Normalizer::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("normalizer: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json(text);
}

}  // namespace latemu

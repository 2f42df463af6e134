#include "latemu/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "latemu/generators.hpp"
#include "latemu/threading.hpp"

namespace fs = std::filesystem;

namespace latemu {

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

Split split_of_index(const DatasetSpec& spec, int64_t index) {
    if (index < spec.train_count) return Split::Train;
    if (index < spec.train_count + spec.val_count) return Split::Val;
    return Split::Test;
}

Trajectory generate_one(const DatasetSpec& spec, int64_t index) {
    const uint64_t seed = spec.seed0 + static_cast<uint64_t>(index);
    Rng theta_rng(derive_seed(seed, "theta"));
    Trajectory traj;
    if (spec.generator == "advection") {
        AdvectionParams p;
        p.vx = spec.vx.sample(theta_rng);
        p.vy = spec.vy.sample(theta_rng);
        p.nu = spec.nu.sample(theta_rng);
        p.height = spec.height;
        p.width = spec.width;
        p.frames = spec.frames;
        p.stride = spec.stride;
        p.ic_power = spec.ic_power;
        p.seed = seed;
        traj = gen_advection(p);
    } else if (spec.generator == "grayscott") {
        GrayScottParams p;
        p.feed = spec.feed.sample(theta_rng);
        p.kill = spec.kill.sample(theta_rng);
        p.height = spec.height;
        p.width = spec.width;
        p.frames = spec.frames;
        p.substeps = spec.stride;
        p.blob_count = spec.blob_count;
        p.seed = seed;
        traj = gen_grayscott(p);
    } else {
        throw IoError("unknown generator '" + spec.generator + "'");
    }
    return traj;
}

std::string DatasetDir::traj_path(Split s, int64_t index) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "traj_%05lld.traj", static_cast<long long>(index));
    return root + "/" + split_name(s) + "/" + buf;
}

bool dataset_ready(const DatasetSpec& spec, const std::string& data_root,
                   const std::string& config_hash) {
    DatasetDir dir{data_root + "/" + spec.name};
    std::ifstream is(dir.meta_path());
    if (!is) return false;
    try {
        nlohmann::json meta = nlohmann::json::parse(is);
        return meta.value("config_hash", std::string()) == config_hash &&
               meta.value("count", int64_t{0}) == spec.total_count();
    } catch (...) {
        return false;
    }
}

int64_t generate_dataset(const DatasetSpec& spec, const std::string& data_root,
                         const std::string& config_hash, int threads, bool force) {
    DatasetDir dir{data_root + "/" + spec.name};
    if (!force && dataset_ready(spec, data_root, config_hash)) return 0;

    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        fs::create_directories(dir.root + "/" + split_name(s));
    }

    const int64_t total = spec.total_count();
    std::vector<Trajectory> train_trajs(static_cast<size_t>(spec.train_count));
    parallel_for(total, threads, [&](int64_t i) {
        Trajectory traj = generate_one(spec, i);
        traj.config_hash = config_hash;
        traj.normalizer_ref = "normalizer.json";
        const Split s = split_of_index(spec, i);
        save_trajectory(dir.traj_path(s, i), traj);
        if (s == Split::Train) train_trajs[static_cast<size_t>(i)] = std::move(traj);
    });

    Normalizer norm = fit_normalizer(train_trajs);
    norm.save(dir.normalizer_path());

    nlohmann::json meta;
    meta["name"] = spec.name;
    meta["generator"] = spec.generator;
    meta["height"] = spec.height;
    meta["width"] = spec.width;
    meta["frames"] = spec.frames;
    meta["stride"] = spec.stride;
    meta["counts"] = {{"train", spec.train_count}, {"val", spec.val_count},
                      {"test", spec.test_count}};
    meta["count"] = total;
    meta["seed0"] = spec.seed0;
    meta["config_hash"] = config_hash;
    std::ofstream os(dir.meta_path(), std::ios::trunc);
    if (!os) throw IoError("dataset: cannot write meta for '" + spec.name + "'");
    os << meta.dump(2) << "\n";
    return total;
}

std::vector<Trajectory> load_split(const DatasetSpec& spec, const std::string& data_root,
                                   Split s) {
    DatasetDir dir{data_root + "/" + spec.name};
    std::vector<Trajectory> out;
    for (int64_t i = 0; i < spec.total_count(); ++i) {
        if (split_of_index(spec, i) != s) continue;
        out.push_back(load_trajectory(dir.traj_path(s, i)));
    }
    return out;
}

Normalizer load_dataset_normalizer(const DatasetSpec& spec, const std::string& data_root) {
    DatasetDir dir{data_root + "/" + spec.name};
    return Normalizer::load(dir.normalizer_path());
}

Tensor fields_to_batch(const std::vector<const Field*>& fields) {
    if (fields.empty()) throw ShapeError("fields_to_batch: empty batch");
    const auto* f0 = fields.front();
    std::vector<float> data;
    data.reserve(fields.size() * f0->values.size());
    for (const auto* f : fields) {
        if (f->channels != f0->channels || f->height != f0->height || f->width != f0->width) {
            throw ShapeError("fields_to_batch: inconsistent shapes");
        }
        data.insert(data.end(), f->values.begin(), f->values.end());
    }
    return Tensor::from_data(
        {static_cast<int64_t>(fields.size()), f0->channels, f0->height, f0->width},
        std::move(data));
}

Field batch_to_field(const Tensor& batch, int64_t index) {
    if (batch.ndim() != 4 || index < 0 || index >= batch.dim(0)) {
        throw ShapeError("batch_to_field: bad index or rank");
    }
    Field f(batch.dim(1), batch.dim(2), batch.dim(3));
    const size_t n = f.values.size();
    std::copy(batch.data().begin() + static_cast<int64_t>(n) * index,
              batch.data().begin() + static_cast<int64_t>(n) * (index + 1), f.values.begin());
    return f;
}

void augment_field(std::vector<float>& chw, int64_t c, int64_t h, int64_t w, bool periodic,
                   Rng& rng) {
    std::vector<float> tmp(chw.size());
    // axis permutation (square grids only)
    if (h == w && rng.uniform() < 0.5f) {
        for (int64_t ci = 0; ci < c; ++ci) {
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    tmp[static_cast<size_t>((ci * h + x) * w + y)] =
                        chw[static_cast<size_t>((ci * h + y) * w + x)];
                }
            }
        }
        chw.swap(tmp);
    }
    const bool flip_y = rng.uniform() < 0.5f;
    const bool flip_x = rng.uniform() < 0.5f;
    if (flip_y || flip_x) {
        for (int64_t ci = 0; ci < c; ++ci) {
            for (int64_t y = 0; y < h; ++y) {
                const int64_t sy = flip_y ? h - 1 - y : y;
                for (int64_t x = 0; x < w; ++x) {
                    const int64_t sx = flip_x ? w - 1 - x : x;
                    tmp[static_cast<size_t>((ci * h + y) * w + x)] =
                        chw[static_cast<size_t>((ci * h + sy) * w + sx)];
                }
            }
        }
        chw.swap(tmp);
    }
    if (periodic) {
        const int64_t dy = rng.uniform_int(0, h - 1);
        const int64_t dx = rng.uniform_int(0, w - 1);
        if (dy != 0 || dx != 0) {
            for (int64_t ci = 0; ci < c; ++ci) {
                for (int64_t y = 0; y < h; ++y) {
                    for (int64_t x = 0; x < w; ++x) {
                        tmp[static_cast<size_t>((ci * h + (y + dy) % h) * w + (x + dx) % w)] =
                            chw[static_cast<size_t>((ci * h + y) * w + x)];
                    }
                }
            }
            chw.swap(tmp);
        }
    }
}

}  // namespace latemu

#include "latemu/field.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace latemu {

namespace {

constexpr char kMagic[8] = {'L', 'M', 'T', 'R', 'A', 'J', '1', '\0'};
constexpr uint32_t kVersion = 1;

bool power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is, const char* what) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw IoError(std::string("trajectory: truncated while reading ") + what);
    return v;
}

}  // namespace

bool Field::finite() const {
    for (float v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string boundary_name(Boundary b) { return b == Boundary::Periodic ? "periodic" : "open"; }

Boundary boundary_from_name(const std::string& name) {
    if (name == "periodic") return Boundary::Periodic;
    if (name == "open") return Boundary::Open;
    throw IoError("unknown boundary kind '" + name + "'");
}

void Trajectory::validate() const {
    if (fields.empty()) throw IoError("trajectory: no frames");
    const auto& f0 = fields.front();
    if (!power_of_two(f0.height) || !power_of_two(f0.width)) {
        throw IoError("trajectory: H and W must be powers of two");
    }
    for (const auto& f : fields) {
        if (f.channels != f0.channels || f.height != f0.height || f.width != f0.width) {
            throw IoError("trajectory: inconsistent frame shapes");
        }
        if (!f.finite()) throw IoError("trajectory: non-finite values");
    }
}

int64_t trajectory_header_bytes() { return 8 + 4 * 5; }

void save_trajectory(const std::string& path, const Trajectory& traj) {
    traj.validate();
    const auto& f0 = traj.fields.front();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("trajectory: cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(f0.channels));
    write_u32(os, static_cast<uint32_t>(f0.height));
    write_u32(os, static_cast<uint32_t>(f0.width));
    write_u32(os, static_cast<uint32_t>(traj.fields.size()));
    for (const auto& f : traj.fields) {
        os.write(reinterpret_cast<const char*>(f.values.data()),
                 static_cast<std::streamsize>(f.values.size() * sizeof(float)));
    }
    if (!os) throw IoError("trajectory: write failed for '" + path + "'");

    nlohmann::json side;
    side["theta"] = traj.theta;
    side["stride"] = traj.stride;
    side["boundary"] = boundary_name(traj.boundary);
    side["channel_names"] = traj.channel_names;
    side["channel_transforms"] = traj.channel_transforms;
    side["seed"] = traj.seed;
    side["normalizer"] = traj.normalizer_ref;
    side["config_hash"] = traj.config_hash;
    if (!traj.extra.empty()) side["extra"] = nlohmann::json::parse(traj.extra);
    std::ofstream js(path + ".json", std::ios::trunc);
    if (!js) throw IoError("trajectory: cannot write sidecar for '" + path + "'");
    js << side.dump(2) << "\n";
}

Trajectory load_trajectory(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("trajectory: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("trajectory: bad magic in '" + path + "'");
    }
    const uint32_t version = read_u32(is, "version");
    if (version != kVersion) {
        throw IoError("trajectory: unsupported version " + std::to_string(version));
    }
    const uint32_t c = read_u32(is, "channels");
    const uint32_t h = read_u32(is, "height");
    const uint32_t w = read_u32(is, "width");
    const uint32_t frames = read_u32(is, "frame count");

    Trajectory traj;
    traj.fields.reserve(frames);
    for (uint32_t i = 0; i < frames; ++i) {
        Field f(c, h, w);
        is.read(reinterpret_cast<char*>(f.values.data()),
                static_cast<std::streamsize>(f.values.size() * sizeof(float)));
        if (!is) throw IoError("trajectory: truncated payload in '" + path + "'");
        traj.fields.push_back(std::move(f));
    }

    std::ifstream js(path + ".json");
    if (js) {
        nlohmann::json side = nlohmann::json::parse(js);
        traj.theta = side.value("theta", std::vector<float>{});
        traj.stride = side.value("stride", 1);
        traj.boundary = boundary_from_name(side.value("boundary", std::string("periodic")));
        traj.channel_names = side.value("channel_names", std::vector<std::string>{});
        traj.channel_transforms = side.value("channel_transforms", std::vector<std::string>{});
        traj.seed = side.value("seed", uint64_t{0});
        traj.normalizer_ref = side.value("normalizer", std::string());
        traj.config_hash = side.value("config_hash", std::string());
        if (side.contains("extra")) traj.extra = side["extra"].dump();
    }
    return traj;
}

}  // namespace latemu

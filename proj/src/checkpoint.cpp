#include "latemu/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace latemu {

namespace {

constexpr char kMagic[8] = {'L', 'M', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is, const char* what) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw IoError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Tensor>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        if (p.name().empty()) throw IoError("checkpoint: refusing to save unnamed parameter");
        write_u32(os, static_cast<uint32_t>(p.name().size()));
        os.write(p.name().data(), static_cast<std::streamsize>(p.name().size()));
        write_u32(os, static_cast<uint32_t>(p.shape().size()));
        for (int64_t d : p.shape()) write_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p.data().data()),
                 static_cast<std::streamsize>(p.data().size() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint: write failed for '" + path + "'");
}

std::vector<NamedArray> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("checkpoint: bad magic in '" + path + "'");
    }
    const uint32_t version = read_u32(is, "version");
    if (version != kVersion) {
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    }
    const uint32_t count = read_u32(is, "parameter count");
    std::vector<NamedArray> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        const uint32_t name_len = read_u32(is, "name length");
        a.name.resize(name_len);
        is.read(a.name.data(), name_len);
        const uint32_t rank = read_u32(is, "rank");
        a.shape.resize(rank);
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            a.shape[d] = read_u32(is, "extent");
            n *= a.shape[d];
        }
        a.data.resize(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(float)));
        if (!is) throw IoError("checkpoint: truncated payload in '" + path + "'");
        out.push_back(std::move(a));
    }
    return out;
}

void load_checkpoint(const std::string& path, std::vector<Tensor>& params) {
    auto arrays = read_checkpoint(path);
    std::unordered_map<std::string, NamedArray*> by_name;
    for (auto& a : arrays) by_name[a.name] = &a;
    for (auto& p : params) {
        auto it = by_name.find(p.name());
        if (it == by_name.end()) {
            throw IoError("checkpoint: missing parameter '" + p.name() + "' in '" + path + "'");
        }
        if (it->second->shape != p.shape()) {
            throw IoError("checkpoint: shape mismatch for '" + p.name() + "': file " +
                          shape_str(it->second->shape) + " vs model " + shape_str(p.shape()));
        }
        p.data_mut() = it->second->data;
    }
}

std::string bytes_hash_hex(const void* data, size_t size) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < size; ++i) h = (h ^ p[i]) * 0x100000001b3ull;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("hash: cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes_hash_hex(bytes.data(), bytes.size());
}

}  // namespace latemu

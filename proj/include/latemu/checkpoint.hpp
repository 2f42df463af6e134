#pragma once

#include <string>
#include <vector>

#include "latemu/tensor.hpp"

namespace latemu {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary parameter container: header (magic, version, parameter count),
// then per parameter (name length, name, rank, extents, f32 little-endian
// payload).
void save_checkpoint(const std::string& path, const std::vector<Tensor>& params);

// Loads values into an existing parameter set, matched by name; throws on
// missing names or shape mismatches.
void load_checkpoint(const std::string& path, std::vector<Tensor>& params);

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
};
std::vector<NamedArray> read_checkpoint(const std::string& path);

// FNV-1a over the raw bytes of a file; used for cache invalidation keys.
std::string file_hash_hex(const std::string& path);
std::string bytes_hash_hex(const void* data, size_t size);

}  // namespace latemu

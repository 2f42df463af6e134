#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace latemu {

// splitmix64; used to derive well-separated stream seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic sub-stream seed from a root seed, a purpose tag and ids.
uint64_t derive_seed(uint64_t root, std::string_view purpose, uint64_t a = 0, uint64_t b = 0);

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    float normal() { return normal_(gen_); }
    float uniform() { return uniform_(gen_); }  // [0,1)
    double uniform_double() { return uniform64_(gen_); }
    uint64_t next_u64() { return gen_(); }
    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive
        return std::uniform_int_distribution<int64_t>(lo, hi)(gen_);
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<float> normal_{0.0f, 1.0f};
    std::uniform_real_distribution<float> uniform_{0.0f, 1.0f};
    std::uniform_real_distribution<double> uniform64_{0.0, 1.0};
};

}  // namespace latemu

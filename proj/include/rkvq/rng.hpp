// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <cstdint>

namespace rkvq {

// Counter-based generator: every draw is a pure function of (key, counter),
// so streams are splittable, order-independent and identical across builds.
// The mix is the splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t keyed_u64(std::uint64_t key, std::uint64_t counter) {
    return mix64(key ^ mix64(counter));
}

// Uniform in (0, 1]: top 53 bits, never exactly zero.
inline double keyed_uniform(std::uint64_t key, std::uint64_t counter) {
    return static_cast<double>((keyed_u64(key, counter) >> 11) + 1) * 0x1.0p-53;
}

// Uniform in [-1, 1).
inline double keyed_uniform_sym(std::uint64_t key, std::uint64_t counter) {
    return static_cast<double>(keyed_u64(key, counter) >> 11) * 0x1.0p-52 - 1.0;
}

// Standard normal via Box-Muller; consumes two sub-streams of one counter.
inline double keyed_normal(std::uint64_t key, std::uint64_t counter) {
    double u1 = keyed_uniform(key, 2 * counter);
    double u2 = keyed_uniform(key, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

// +1 / -1 with equal probability.
inline int keyed_sign(std::uint64_t key, std::uint64_t counter) {
    return (keyed_u64(key, counter) >> 63) ? -1 : 1;
}

// Small sequential convenience wrapper over the counter stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(seed) {}
    std::uint64_t next_u64() { return keyed_u64(key_, counter_++); }
    double uniform() { return keyed_uniform(key_, counter_++); }
    double uniform_sym() { return keyed_uniform_sym(key_, counter_++); }
    double normal() { return keyed_normal(key_, counter_++); }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace rkvq

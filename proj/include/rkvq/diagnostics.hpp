// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rkvq/common.hpp"

namespace rkvq {

// Desk-scale stand-ins for model activations. Each profile documents its
// analytic moments next to its generator.
enum class Profile {
    Gaussian,                 // iid N(0,1); excess kurtosis 0
    Laplace,                  // iid, unit variance; excess kurtosis 3
    DominantCoordinate,       // channel 0 always carries the row absmax
    HeteroscedasticChannels,  // channel c ~ U(-sigma_c, sigma_c), sigma_c = 2^(c mod 8)
    HeavyTailMixture,         // ~1% hot channels holding ~44% energy; pooled excess ~15
};

Profile profile_from_name(const std::string& name);
std::string profile_name(Profile p);

struct ActivationBatch {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<float> data;  // row-major n x d
    std::string source;       // generator id or file label
    std::uint64_t seed = 0;

    const float* row(std::size_t t) const { return data.data() + t * d; }
};

// Deterministic in seed (counter-based draws, order independent).
ActivationBatch synth_activations(Profile profile, std::size_t n, std::size_t d,
                                  std::uint64_t seed);

// Shannon entropy (nats) of the empirical distribution of argmax_c |X[t,c]|
// over rows. Always in [0, ln d].
double argmax_entropy(const float* x, std::size_t n, std::size_t d);
double argmax_entropy(const ActivationBatch& batch);

// Fraction of total energy held by the top ceil(top_frac * d) channels.
// Throws UndefinedMoment on a zero-energy batch.
double energy_concentration(const float* x, std::size_t n, std::size_t d, double top_frac);
double energy_concentration(const ActivationBatch& batch, double top_frac);

// Pooled excess kurtosis over all entries (bias-uncorrected).
double pooled_excess_kurtosis(const float* x, std::size_t count);

}  // namespace rkvq

// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#include "rkvq/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "rkvq/rng.hpp"

namespace rkvq {

Profile profile_from_name(const std::string& name) {
    if (name == "gaussian") return Profile::Gaussian;
    if (name == "laplace") return Profile::Laplace;
    if (name == "dominant_coordinate") return Profile::DominantCoordinate;
    if (name == "heteroscedastic") return Profile::HeteroscedasticChannels;
    if (name == "heavy_tail") return Profile::HeavyTailMixture;
    throw_error(ErrorKind::Config, "unknown activation profile '" + name + "'");
}

std::string profile_name(Profile p) {
    switch (p) {
        case Profile::Gaussian: return "gaussian";
        case Profile::Laplace: return "laplace";
        case Profile::DominantCoordinate: return "dominant_coordinate";
        case Profile::HeteroscedasticChannels: return "heteroscedastic";
        case Profile::HeavyTailMixture: return "heavy_tail";
    }
    return "?";
}

namespace {

// Unit-variance Laplace via inverse CDF; excess kurtosis 3.
double laplace_draw(std::uint64_t key, std::uint64_t counter) {
    double t = keyed_uniform_sym(key, counter);
    double mag = std::min(std::fabs(t), 1.0 - 0x1.0p-53);
    double b = 0.70710678118654752440;  // scale for unit variance
    double v = -b * std::log(1.0 - mag);
    return t < 0 ? -v : v;
}

// HeavyTailMixture hot-channel parameters for a given d.
//
// n_hot = ceil(d/100) channels carry share 0.44 of the expected energy:
//   n_hot * v = (0.44 / 0.56) * (d - n_hot)  =>  v = (11/14)(d - n_hot)/n_hot.
// Within-channel (non-excess) kurtosis K of the hot channels is solved so
// the pooled excess kurtosis is 15 where feasible (clamped at K >= 1):
//   m2 = (n_hot v + (d - n_hot))/d,  m4 = (n_hot K v^2 + 3(d - n_hot))/d,
//   m4 = 18 m2^2.
// At d=128 this gives n_hot=2, v=49.5, K~1.376.
struct HeavyTailParams {
    int n_hot;
    double v;
    double k;
};

HeavyTailParams heavy_tail_params(std::size_t d) {
    HeavyTailParams p;
    p.n_hot = static_cast<int>((d + 99) / 100);
    double nh = static_cast<double>(p.n_hot);
    double dd = static_cast<double>(d);
    p.v = (11.0 / 14.0) * (dd - nh) / nh;
    double m2 = (nh * p.v + (dd - nh)) / dd;
    p.k = (18.0 * m2 * m2 * dd - 3.0 * (dd - nh)) / (nh * p.v * p.v);
    if (p.k < 1.0) p.k = 1.0;
    return p;
}

// Zero-mean unit-second-moment draw with fourth moment K:
//  K <= 2: magnitude^2 in {1 +/- sqrt(K-1)} with equal probability;
//  K  > 2: magnitude^2 = K with probability 1/K, else 0.
double shaped_draw(double k, std::uint64_t key, std::uint64_t counter) {
    double u = keyed_uniform(key, 2 * counter);
    double sign = keyed_u64(key, 2 * counter + 1) >> 63 ? -1.0 : 1.0;
    double t;
    if (k <= 2.0) {
        double r = std::sqrt(std::max(k - 1.0, 0.0));
        t = u < 0.5 ? 1.0 + r : 1.0 - r;
    } else {
        t = u < 1.0 / k ? k : 0.0;
    }
    return sign * std::sqrt(t);
}

}  // namespace

ActivationBatch synth_activations(Profile profile, std::size_t n, std::size_t d,
                                  std::uint64_t seed) {
    if (n < 1 || d < 1) throw_error(ErrorKind::Range, "synth_activations: n, d must be >= 1");
    ActivationBatch batch;
    batch.n = n;
    batch.d = d;
    batch.seed = seed;
    batch.source = profile_name(profile);
    batch.data.resize(n * d);

    const HeavyTailParams ht =
        profile == Profile::HeavyTailMixture ? heavy_tail_params(d) : HeavyTailParams{};

    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
            std::uint64_t ctr = t * d + c;
            double v = 0.0;
            switch (profile) {
                case Profile::Gaussian:
                    v = keyed_normal(seed, ctr);
                    break;
                case Profile::Laplace:
                    v = laplace_draw(seed, ctr);
                    break;
                case Profile::DominantCoordinate:
                    // Channel 0: 50 * sign * (1 + |Z|); magnitude >= 50, so it
                    // holds the row absmax almost surely. E[x^2] = 50^2 * 3.5958.
                    if (c == 0) {
                        double z = std::fabs(keyed_normal(seed, 2 * ctr));
                        double sg = keyed_u64(seed, 2 * ctr + 1) >> 63 ? -1.0 : 1.0;
                        v = 50.0 * sg * (1.0 + z);
                    } else {
                        v = keyed_normal(seed, 2 * ctr);
                    }
                    break;
                case Profile::HeteroscedasticChannels: {
                    // Uniform on (-sigma_c, sigma_c): variance sigma_c^2 / 3,
                    // within-channel kurtosis 1.8 (platykurtic).
                    double sigma = static_cast<double>(1 << (c % 8));
                    v = sigma * keyed_uniform_sym(seed, ctr);
                    break;
                }
                case Profile::HeavyTailMixture:
                    if (c < static_cast<std::size_t>(ht.n_hot)) {
                        v = std::sqrt(ht.v) * shaped_draw(ht.k, seed, ctr);
                    } else {
                        v = keyed_normal(seed, ctr);
                    }
                    break;
            }
            batch.data[t * d + c] = static_cast<float>(v);
        }
    }
    return batch;
}

double argmax_entropy(const float* x, std::size_t n, std::size_t d) {
    if (n < 1 || d < 1) throw_error(ErrorKind::Range, "argmax_entropy: empty batch");
    std::vector<std::uint64_t> counts(d, 0);
    for (std::size_t t = 0; t < n; ++t) {
        const float* row = x + t * d;
        std::size_t best = 0;
        float best_abs = std::fabs(row[0]);
        for (std::size_t c = 1; c < d; ++c) {
            float a = std::fabs(row[c]);
            if (a > best_abs) {
                best_abs = a;
                best = c;
            }
        }
        ++counts[best];
    }
    double h = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        if (counts[c] == 0) continue;
        double p = static_cast<double>(counts[c]) / static_cast<double>(n);
        h -= p * std::log(p);
    }
    return h;
}

double argmax_entropy(const ActivationBatch& batch) {
    return argmax_entropy(batch.data.data(), batch.n, batch.d);
}

double energy_concentration(const float* x, std::size_t n, std::size_t d, double top_frac) {
    if (n < 1 || d < 1) throw_error(ErrorKind::Range, "energy_concentration: empty batch");
    if (!(top_frac > 0.0) || top_frac > 1.0)
        throw_error(ErrorKind::Range, "energy_concentration: top_frac must be in (0, 1]");
    std::vector<double> energy(d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        const float* row = x + t * d;
        for (std::size_t c = 0; c < d; ++c)
            energy[c] += static_cast<double>(row[c]) * static_cast<double>(row[c]);
    }
    double total = 0.0;
    for (double e : energy) total += e;
    if (total == 0.0)
        throw_error(ErrorKind::UndefinedMoment, "energy_concentration: zero-energy batch");
    std::size_t top_k = static_cast<std::size_t>(std::ceil(top_frac * static_cast<double>(d)));
    top_k = std::min(std::max<std::size_t>(top_k, 1), d);
    std::sort(energy.begin(), energy.end(), std::greater<double>());
    double top = 0.0;
    for (std::size_t i = 0; i < top_k; ++i) top += energy[i];
    return top / total;
}

double energy_concentration(const ActivationBatch& batch, double top_frac) {
    return energy_concentration(batch.data.data(), batch.n, batch.d, top_frac);
}

double pooled_excess_kurtosis(const float* x, std::size_t count) {
    if (count == 0) throw_error(ErrorKind::Range, "pooled_excess_kurtosis: empty input");
    double mean = 0.0;
    for (std::size_t i = 0; i < count; ++i) mean += x[i];
    mean /= static_cast<double>(count);
    double m2 = 0.0, m4 = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        double c = x[i] - mean;
        double c2 = c * c;
        m2 += c2;
        m4 += c2 * c2;
    }
    m2 /= static_cast<double>(count);
    m4 /= static_cast<double>(count);
    if (m2 == 0.0)
        throw_error(ErrorKind::UndefinedMoment, "pooled_excess_kurtosis: constant input");
    return m4 / (m2 * m2) - 3.0;
}

}  // namespace rkvq

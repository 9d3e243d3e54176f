// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rkvq/diagnostics.hpp"
#include "rkvq/transform.hpp"

using namespace rkvq;

TEST_CASE("generators are bit-reproducible for a fixed seed") {
    for (Profile p : {Profile::Gaussian, Profile::Laplace, Profile::DominantCoordinate,
                      Profile::HeteroscedasticChannels, Profile::HeavyTailMixture}) {
        ActivationBatch a = synth_activations(p, 64, 32, 42);
        ActivationBatch b = synth_activations(p, 64, 32, 42);
        CHECK(a.data == b.data);
        ActivationBatch c = synth_activations(p, 64, 32, 43);
        CHECK(a.data != c.data);
    }
    CHECK_THROWS_AS((void)synth_activations(Profile::Gaussian, 0, 8, 0), Error);
}

TEST_CASE("gaussian profile: excess kurtosis near zero at 1e6 samples") {
    ActivationBatch batch = synth_activations(Profile::Gaussian, 8192, 128, 1);
    double k = pooled_excess_kurtosis(batch.data.data(), batch.data.size());
    CHECK(std::fabs(k) < 0.2);
}

TEST_CASE("laplace profile: excess kurtosis near the analytic 3") {
    ActivationBatch batch = synth_activations(Profile::Laplace, 8192, 128, 2);
    double k = pooled_excess_kurtosis(batch.data.data(), batch.data.size());
    CHECK(k > 2.0);
    CHECK(k < 4.5);
}

TEST_CASE("dominant coordinate profile drives argmax entropy to ~0") {
    for (int d : {64, 128}) {
        ActivationBatch batch = synth_activations(Profile::DominantCoordinate, 4096, d, 3);
        CHECK(argmax_entropy(batch) < 0.3);
    }
}

TEST_CASE("heteroscedastic channels follow the 2^(c mod 8) ladder") {
    ActivationBatch batch = synth_activations(Profile::HeteroscedasticChannels, 16384, 16, 4);
    auto channel_var = [&](int c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < batch.n; ++t) {
            double v = batch.data[t * batch.d + c];
            acc += v * v;
        }
        return acc / static_cast<double>(batch.n);
    };
    // Uniform(-sigma, sigma) has variance sigma^2/3; channel 7 is 128x wider.
    double ratio = channel_var(7) / channel_var(0);
    CHECK(ratio > 16384.0 * 0.8);
    CHECK(ratio < 16384.0 * 1.2);
    CHECK(channel_var(0) == doctest::Approx(1.0 / 3.0).epsilon(0.05));
    CHECK(channel_var(8) == doctest::Approx(channel_var(0)).epsilon(0.1));
}

TEST_CASE("heavy-tail mixture hits its documented moments and flattens under SRFT") {
    const std::size_t n = 8192;
    const int d = 128;  // n*d > 1e6 samples
    ActivationBatch batch = synth_activations(Profile::HeavyTailMixture, n, d, 5);

    double kurt_before = pooled_excess_kurtosis(batch.data.data(), batch.data.size());
    CHECK(kurt_before > 10.0);
    CHECK(kurt_before < 22.0);  // tuned to ~15

    double top1 = energy_concentration(batch, 0.01);
    CHECK(top1 == doctest::Approx(0.44).epsilon(0.15));

    TransformSpec spec = make_spec(TransformKind::Srft, d, 6);
    std::vector<float> transformed(batch.data.size());
    transform_forward_batch<float>(spec, batch.data.data(), n, transformed.data());
    double kurt_after = pooled_excess_kurtosis(transformed.data(), transformed.size());
    CHECK(kurt_after < 1.0);

    double top1_after = energy_concentration(transformed.data(), n, d, 0.01);
    double top_frac_effective = std::ceil(0.01 * d) / static_cast<double>(d);
    CHECK(top1_after <= 2.0 * top_frac_effective);
}

TEST_CASE("argmax_entropy: degenerate, uniform, and bounds") {
    const int d = 128;
    // All rows peak at coordinate 0.
    std::vector<float> peaked(16 * d, 0.1f);
    for (int t = 0; t < 16; ++t) peaked[t * d] = 5.0f;
    CHECK(argmax_entropy(peaked.data(), 16, d) == 0.0);

    // Constructed uniform argmax: row t peaks at t mod d -> exactly ln d.
    const std::size_t n = 4 * d;
    std::vector<float> uniform(n * d, 0.0f);
    for (std::size_t t = 0; t < n; ++t) uniform[t * d + (t % d)] = 1.0f;
    double h = argmax_entropy(uniform.data(), n, d);
    CHECK(h == doctest::Approx(std::log(static_cast<double>(d))).epsilon(1e-12));
    CHECK(h <= std::log(static_cast<double>(d)) + 1e-12);
}

TEST_CASE("energy_concentration: one-hot rows, isotropic batch, errors") {
    const int d = 100;
    std::vector<float> onehot(50 * d, 0.0f);
    for (int t = 0; t < 50; ++t) onehot[t * d + 3] = 2.0f;
    CHECK(energy_concentration(onehot.data(), 50, d, 0.01) == doctest::Approx(1.0));
    CHECK(energy_concentration(onehot.data(), 50, d, 1.0) == doctest::Approx(1.0));

    ActivationBatch iso = synth_activations(Profile::Gaussian, 10000, d, 8);
    double share = energy_concentration(iso, 0.01);
    CHECK(share == doctest::Approx(0.01).epsilon(0.3));

    std::vector<float> zeros(8 * d, 0.0f);
    CHECK_THROWS_AS((void)energy_concentration(zeros.data(), 8, d, 0.01), Error);
    CHECK_THROWS_AS((void)energy_concentration(onehot.data(), 50, d, 0.0), Error);
    CHECK_THROWS_AS((void)energy_concentration(onehot.data(), 50, d, 1.5), Error);
}

TEST_CASE("statistics are permutation-invariant over rows") {
    ActivationBatch batch = synth_activations(Profile::HeavyTailMixture, 256, 64, 9);
    std::vector<float> reversed(batch.data.size());
    for (std::size_t t = 0; t < batch.n; ++t)
        std::copy(batch.data.begin() + t * batch.d, batch.data.begin() + (t + 1) * batch.d,
                  reversed.begin() + (batch.n - 1 - t) * batch.d);
    CHECK(argmax_entropy(batch) ==
          doctest::Approx(argmax_entropy(reversed.data(), batch.n, batch.d)).epsilon(1e-12));
    CHECK(energy_concentration(batch, 0.05) ==
          doctest::Approx(energy_concentration(reversed.data(), batch.n, batch.d, 0.05))
              .epsilon(1e-12));
}

TEST_CASE("profile names round-trip") {
    for (Profile p : {Profile::Gaussian, Profile::Laplace, Profile::DominantCoordinate,
                      Profile::HeteroscedasticChannels, Profile::HeavyTailMixture})
        CHECK(profile_from_name(profile_name(p)) == p);
    CHECK_THROWS_AS((void)profile_from_name("cauchy"), Error);
}

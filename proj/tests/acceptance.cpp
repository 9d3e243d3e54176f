// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance suite. Each criterion prints exactly one
// [PASS]/[FAIL] line; the process exits nonzero if any criterion failed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "rkvq/calibrate.hpp"
#include "rkvq/diagnostics.hpp"
#include "rkvq/kvcache.hpp"
#include "rkvq/oracle.hpp"
#include "rkvq/perfmodel.hpp"
#include "rkvq/quantize.hpp"
#include "rkvq/rng.hpp"
#include "rkvq/transform.hpp"

using namespace rkvq;

namespace {

int g_failed_criteria = 0;
int g_criterion_failures = 0;

#define ACHECK(cond)                                                             \
    do {                                                                         \
        if (!(cond)) {                                                           \
            ++g_criterion_failures;                                              \
            std::printf("    check failed at %s:%d: %s\n", __FILE__, __LINE__, #cond); \
        }                                                                        \
    } while (0)

struct Criterion {
    int id;
    const char* what;
    std::chrono::steady_clock::time_point t0;

    Criterion(int id_, const char* what_) : id(id_), what(what_) {
        g_criterion_failures = 0;
        t0 = std::chrono::steady_clock::now();
    }
    ~Criterion() {
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (g_criterion_failures == 0) {
            std::printf("[PASS] criterion %d: %s (%.2fs)\n", id, what, secs);
        } else {
            std::printf("[FAIL] criterion %d: %s (%d failed checks, %.2fs)\n", id, what,
                        g_criterion_failures, secs);
            ++g_failed_criteria;
        }
        std::fflush(stdout);
    }
};

std::vector<float> random_vec(int d, std::uint64_t seed) {
    std::vector<float> v(d);
    for (int i = 0; i < d; ++i) v[i] = static_cast<float>(keyed_normal(seed, i));
    return v;
}

void criterion1_orthonormality_roundtrip() {
    Criterion c(1, "orthonormality and round-trip at d in {4,64,128,256}");
    for (int d : {4, 64, 128, 256}) {
        TransformSpec spec = make_spec(TransformKind::Srft, d, 100 + d);
        double worst_norm = 0.0, worst_rt32 = 0.0, worst_rt64 = 0.0;
        std::vector<float> y(d), back(d);
        std::vector<double> yd(d), backd(d);
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<float> x = random_vec(d, 7000 + trial);
            srft_forward<float>(spec, x, y);
            double nx = 0, ny = 0;
            for (int i = 0; i < d; ++i) {
                nx += static_cast<double>(x[i]) * x[i];
                ny += static_cast<double>(y[i]) * y[i];
            }
            worst_norm = std::max(worst_norm,
                                  std::fabs(std::sqrt(ny) - std::sqrt(nx)) / std::sqrt(nx));
            srft_inverse<float>(spec, y, back);
            for (int i = 0; i < d; ++i)
                worst_rt32 = std::max(worst_rt32,
                                      std::fabs(static_cast<double>(back[i]) - x[i]));

            std::vector<double> xd(d);
            for (int i = 0; i < d; ++i) xd[i] = keyed_normal(9000 + trial, i);
            srft_forward<double>(spec, xd, yd);
            srft_inverse<double>(spec, yd, backd);
            for (int i = 0; i < d; ++i)
                worst_rt64 = std::max(worst_rt64, std::fabs(backd[i] - xd[i]));
        }
        ACHECK(worst_norm <= 1e-5);
        ACHECK(worst_rt32 <= 1e-5);
        ACHECK(worst_rt64 <= 1e-12);
    }
}

void criterion2_oracle_crossval() {
    Criterion c(2, "quantizer fast path vs scalar oracle over 1e6 values per config");
    struct Cfg {
        int d;
        int bits;
    };
    for (Cfg cfg : {Cfg{64, 8}, Cfg{128, 8}, Cfg{64, 4}, Cfg{128, 4}}) {
        const std::uint64_t n_vec = 1'000'000 / cfg.d;
        std::vector<float> x(n_vec * cfg.d);
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = static_cast<float>(keyed_normal(55 + cfg.d + cfg.bits, i) * 2.5);
        QuantScheme scheme{cfg.bits, Granularity::PerToken, 0, cfg.d};
        oracle::CrossvalReport rep = oracle::crossval_quantize(scheme, x.data(), n_vec);
        ACHECK(rep.pct_identical >= 99.99);
        ACHECK(rep.n_other == 0);  // every mismatch is a half-LSB tie
        ACHECK(rep.max_scale_rel_err <= 1e-6);
    }
}

void criterion3_nibble_packing() {
    Criterion c(3, "nibble packing bijective (exhaustive + property) with 0x97 worked byte");
    std::vector<std::int8_t> pair = {7, -7};
    auto byte = pack_nibbles({pair.data(), pair.size()});
    ACHECK(byte.size() == 1 && byte[0] == 0x97);
    for (int b = 0; b < 256; ++b) {
        std::uint8_t v = static_cast<std::uint8_t>(b);
        auto codes = unpack_nibbles({&v, 1}, 2);
        auto again = pack_nibbles({codes.data(), codes.size()});
        ACHECK(again[0] == v);
    }
    Rng rng(321);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::int8_t> codes(100);
        for (auto& q : codes)
            q = static_cast<std::int8_t>(static_cast<int>(rng.next_u64() % 16) - 8);
        auto packed = pack_nibbles({codes.data(), codes.size()});
        auto back = unpack_nibbles({packed.data(), packed.size()}, codes.size());
        ACHECK(back == codes);
    }
}

// "GB" as MiB-based tooling reports it: bytes / 2^20 / 1000.
double display_gb(std::uint64_t bytes) {
    return static_cast<double>(bytes) / (1024.0 * 1024.0) / 1000.0;
}

void criterion4_compression_arithmetic() {
    Criterion c(4, "compression ratios and production-context memory table");
    QuantScheme d64{4, Granularity::PerToken, 0, 64};
    QuantScheme d128{4, Granularity::PerToken, 0, 128};
    ACHECK(std::fabs(compression_ratio(d64) - 2.0 * 64 / 36.0) < 1e-12);
    ACHECK(std::fabs(compression_ratio(d128) - 2.0 * 128 / 68.0) < 1e-12);
    ACHECK(std::round(compression_ratio(d64) * 100) / 100 == 3.56);
    ACHECK(std::round(compression_ratio(d128) * 100) / 100 == 3.76);

    struct Row {
        int layers, heads, d;
        double fp16_16k, fp16_128k, int4_128k;
    };
    // layers / kv heads / head_dim and the expected table cells.
    const Row rows[] = {
        {24, 32, 64, 3.07, 24.58, 6.91},   // 1.7B-class, d=64
        {32, 8, 128, 2.05, 16.38, 4.35},   // 8B-class, d=128
        {80, 8, 128, 5.12, 40.96, 10.88},  // 70B-class, d=128
    };
    for (const Row& r : rows) {
        auto fp16_bytes = [&](std::uint64_t ctx) {
            return 2ULL * r.layers * r.heads * ctx * r.d * 2;  // K and V at 2 bytes
        };
        auto int4_bytes = [&](std::uint64_t ctx) {
            return 2ULL * r.layers * r.heads * ctx * (r.d / 2 + 4);
        };
        ACHECK(std::fabs(display_gb(fp16_bytes(16384)) - r.fp16_16k) / r.fp16_16k < 0.01);
        ACHECK(std::fabs(display_gb(fp16_bytes(131072)) - r.fp16_128k) / r.fp16_128k < 0.01);
        ACHECK(std::fabs(display_gb(int4_bytes(131072)) - r.int4_128k) / r.int4_128k < 0.01);
    }
}

void criterion5_gaussianization() {
    Criterion c(5, "heavy-tail batch gaussianizes and flattens under SRFT");
    const std::size_t n = 8192;
    const int d = 128;
    ActivationBatch batch = synth_activations(Profile::HeavyTailMixture, n, d, 17);
    double kurt_before = pooled_excess_kurtosis(batch.data.data(), batch.data.size());
    ACHECK(kurt_before >= 10.0);

    TransformSpec spec = make_spec(TransformKind::Srft, d, 18);
    std::vector<float> transformed(batch.data.size());
    transform_forward_batch<float>(spec, batch.data.data(), n, transformed.data());
    double kurt_after = pooled_excess_kurtosis(transformed.data(), transformed.size());
    ACHECK(kurt_after < 1.0);

    double top_frac_effective = std::ceil(0.01 * d) / static_cast<double>(d);
    double share_after = energy_concentration(transformed.data(), n, d, 0.01);
    ACHECK(share_after <= 2.0 * top_frac_effective);
    ACHECK(share_after >= top_frac_effective / 2.0);
}

void criterion6_calibration() {
    Criterion c(6, "calibration: gradients, monotone MSE, orthogonality, ablation ordering");
    // (a) analytic gradients vs central differences, d=8, float64.
    {
        const int d = 8;
        const std::size_t n = 16;
        QuantScheme scheme{4, Granularity::PerToken, 0, d};
        std::vector<double> x(n * d);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = keyed_normal(23, i);

        RotationParams p;
        p.kind = RotationKind::Cayley;
        p.d = d;
        p.lambda.resize(d);
        for (int i = 0; i < d; ++i) p.lambda[i] = 0.8 + 0.05 * i;
        p.generator.resize(d * d);
        for (std::size_t i = 0; i < p.generator.size(); ++i)
            p.generator[i] = 0.1 * keyed_normal(31, i);

        std::vector<double> scales = calib::unit_scales(p, scheme, x.data(), n);
        for (double& s : scales) s *= 0.5;
        calib::LossGrad lg =
            calib::loss_and_grad(p, scheme, x.data(), n, calib::QuantMode::SmoothClamp, &scales);

        Rng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            double* param;
            double analytic;
            if (trial % 2 == 0) {
                int ch = static_cast<int>(rng.next_u64() % d);
                param = &p.lambda[ch];
                analytic = lg.d_lambda[ch];
            } else {
                std::size_t i = rng.next_u64() % p.generator.size();
                param = &p.generator[i];
                analytic = lg.d_generator[i];
            }
            const double h = 1e-6 * std::max(1.0, std::fabs(*param));
            const double saved = *param;
            *param = saved + h;
            double up =
                calib::loss_only(p, scheme, x.data(), n, calib::QuantMode::SmoothClamp, &scales);
            *param = saved - h;
            double down =
                calib::loss_only(p, scheme, x.data(), n, calib::QuantMode::SmoothClamp, &scales);
            *param = saved;
            double fd = (up - down) / (2.0 * h);
            double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-10});
            ACHECK(std::fabs(fd - analytic) / denom < 1e-4);
        }
    }

    // (b, c, d) fits on the heteroscedastic batch.
    const int d = 64;
    ActivationBatch raw = synth_activations(Profile::HeteroscedasticChannels, 256, d, 29);
    TransformSpec spec = make_spec(TransformKind::Srft, d, 30);
    ActivationBatch transformed = raw;
    transform_forward_batch<float>(spec, raw.data.data(), raw.n, transformed.data.data());

    CalibConfig config;
    config.scheme = QuantScheme{4, Granularity::PerToken, 0, d};
    config.steps = 300;

    auto [scale_params, scale_rep] = fit(RotationKind::ScaleOnly, config, transformed);
    ACHECK(scale_rep.mse_final <= scale_rep.mse_initial);
    ACHECK(scale_rep.reduction_pct > 30.0);

    CalibConfig rot_config = config;
    rot_config.lr = 1e-2;
    auto [cayley_params, cayley_rep] = fit(RotationKind::Cayley, rot_config, transformed);
    auto [nosrft_params, nosrft_rep] = fit(RotationKind::NoSrftCayley, rot_config, raw);
    auto [hh_params, hh_rep] = fit(RotationKind::Householder, rot_config, transformed);
    ACHECK(cayley_rep.mse_final <= cayley_rep.mse_initial);
    ACHECK(nosrft_rep.mse_final <= nosrft_rep.mse_initial);
    ACHECK(hh_rep.mse_final <= hh_rep.mse_initial);

    auto ortho_err = [&](const std::vector<float>& r) {
        double worst = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int k = 0; k < d; ++k)
                    acc += static_cast<double>(r[k * d + i]) * r[k * d + j];
                worst = std::max(worst, std::fabs(acc - (i == j ? 1.0 : 0.0)));
            }
        return worst;
    };
    ACHECK(ortho_err(cayley_params.cached_r) <= 1e-5);
    ACHECK(ortho_err(hh_params.cached_r) <= 1e-5);
    ACHECK(param_count(hh_params) == static_cast<std::size_t>(d / 2 + 1) * d);

    // Learning R + lambda on the raw axis-aligned batch reaches strictly
    // lower MSE than the same budget on top of the fixed random transform.
    ACHECK(nosrft_rep.mse_final < cayley_rep.mse_final);
}

void criterion7_cache_contract() {
    Criterion c(7, "cache contract over randomized schedules; steady-state memory ratio");
    for (int w : {4, 16, 32}) {
        CacheConfig config;
        config.d = 32;
        config.scheme = QuantScheme{8, Granularity::PerToken, 0, 32};
        config.window = w;
        config.transform = TransformKind::Srft;
        config.seed = 41;
        KvCacheLayer layer(config);
        const std::uint32_t n = 10000;
        Rng rng(w);
        for (std::uint32_t i = 0; i < n; ++i) {
            std::vector<float> k(32), v(32);
            for (int b = 0; b < 16; ++b) {
                k[b] = (i >> b) & 1 ? 1.0f : -1.0f;
                v[b] = ((i + 7) >> b) & 1 ? 1.0f : -1.0f;
            }
            for (int b = 16; b < 32; ++b) {
                k[b] = 0.05f * static_cast<float>(keyed_normal(i, b));
                v[b] = 0.05f * static_cast<float>(keyed_normal(i + 1, b));
            }
            layer.update(k, v);
            if (rng.next_u64() % 7 == 0) (void)layer.read();
        }
        ACHECK(layer.counters().flushes == n / static_cast<std::uint32_t>(w));
        ACHECK(layer.counters().dequant_rebuilds <= layer.counters().flushes + 1);

        KvView view = layer.read();
        ACHECK(view.n_tokens() == n);
        std::vector<float> k_all = view.k_matrix();
        bool order_ok = true;
        for (std::uint32_t i = 0; i < n; ++i) {
            std::uint32_t decoded = 0;
            for (int b = 0; b < 16; ++b)
                if (k_all[i * 32 + b] > 0.0f) decoded |= 1u << b;
            if (decoded != (i & 0xFFFF)) order_ok = false;
        }
        ACHECK(order_ok);

        // Memo coherence: byte equality against a fresh dequantization.
        std::vector<float> fresh = layer.dequant_prefix_fresh(true);
        ACHECK(std::memcmp(fresh.data(), view.prefix_k, fresh.size() * sizeof(float)) == 0);
    }

    // Steady-state memory ratio at the deployment configuration.
    auto ratio_at = [&](int window) {
        CacheConfig config;
        config.d = 128;
        config.scheme = QuantScheme{4, Granularity::PerChannelPlusGroup, 32, 128};
        config.window = window;
        config.lambda_source = LambdaSource::Calibrated;
        config.seed = 43;
        ChannelScale lambda;
        lambda.lambda.assign(128, 1.0f);
        KvCacheLayer layer(config, lambda, lambda);
        for (int i = 0; i < 1024; ++i) {
            std::vector<float> t = random_vec(128, 5000 + i);
            layer.update(t, t);
        }
        return memory_report(layer).ratio;
    };
    double r16 = ratio_at(16);
    ACHECK(r16 >= 3.0);
    ACHECK(r16 <= 3.2);
    ACHECK(ratio_at(32) < 3.0);
}

void criterion8_cost_model() {
    Criterion c(8, "bandwidth cost model: negative delta at 25 ns/vec, crossover flips sign");
    CostModel model;  // 60 GB/s, 25 ns/vec at d=128, 1 us dispatch
    DecodeStepSizes sizes;
    sizes.baseline_bytes = 3.1e9;
    sizes.fp16_cache_bytes = 28.0 * 1024 * 2 * 2 * 128 * 2;
    sizes.int4_cache_bytes = 28.0 * 1024 * 2 * 2 * (64 + 16) + 28.0 * 2 * 512;
    sizes.kernel_vecs = 28.0 * 1024 * 2 * 2 / 16.0;
    sizes.d = 128;
    DecodeStepCost at_25 = decode_step_cost(model, sizes);
    ACHECK(at_25.delta_pct < 0.0);

    double star = crossover_overhead_ns(model, sizes);
    ACHECK(star > 25.0);
    model.overhead_ns_per_vec = {{128, star}};
    DecodeStepCost at_star = decode_step_cost(model, sizes);
    ACHECK(std::fabs(at_star.ns_int4 - at_star.ns_fp16) <= 1e-9 * at_star.ns_fp16);
    model.overhead_ns_per_vec = {{128, star * 1.02}};
    ACHECK(decode_step_cost(model, sizes).delta_pct > 0.0);
    model.overhead_ns_per_vec = {{128, star * 0.98}};
    ACHECK(decode_step_cost(model, sizes).delta_pct < 0.0);
}

void criterion9_dft8_matmul() {
    Criterion c(9, "length-8 DFT as a 16x16 real matmul, 1e-12 over 1000 inputs");
    oracle::Dft8Report rep = oracle::dft8_as_matmul(1000, 3);
    ACHECK(rep.n_checked == 1000);
    ACHECK(rep.max_abs_err < 1e-12);
}

void criterion10_flop_convention() {
    Criterion c(10, "FLOP convention consistent with 147 and 227 GFLOPS within 2%");
    double g64 = static_cast<double>(flops_per_vec(64)) / 13.0;
    double g128 = static_cast<double>(flops_per_vec(128)) / 19.5;
    ACHECK(std::fabs(g64 - 147.0) / 147.0 <= 0.02);
    ACHECK(std::fabs(g128 - 227.0) / 227.0 <= 0.02);
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion1_orthonormality_roundtrip();
    criterion2_oracle_crossval();
    criterion3_nibble_packing();
    criterion4_compression_arithmetic();
    criterion5_gaussianization();
    criterion6_calibration();
    criterion7_cache_contract();
    criterion8_cost_model();
    criterion9_dft8_matmul();
    criterion10_flop_convention();
    if (g_failed_criteria == 0) {
        std::printf("all 10 criteria passed\n");
        return 0;
    }
    std::printf("%d criteria FAILED\n", g_failed_criteria);
    return 1;
}

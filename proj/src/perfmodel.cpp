// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#include "rkvq/perfmodel.hpp"

#include <algorithm>
#include <limits>
#include <chrono>
#include <cmath>

#include "rkvq/rng.hpp"
#include "rkvq/transform.hpp"

namespace rkvq {

void CostModel::validate() const {
    if (bandwidth_gbps <= 0.0) throw_error(ErrorKind::Config, "bandwidth must be positive");
    if (dispatch_ns < 0.0) throw_error(ErrorKind::Config, "dispatch_ns must be >= 0");
    if (overhead_ns_per_vec.empty())
        throw_error(ErrorKind::Config, "overhead table must not be empty");
    for (const auto& [d, ns] : overhead_ns_per_vec)
        if (d <= 0 || ns <= 0.0)
            throw_error(ErrorKind::Config, "overhead table entries must be positive");
}

double CostModel::overhead_for(int d) const {
    auto it = overhead_ns_per_vec.find(d);
    if (it != overhead_ns_per_vec.end()) return it->second;
    // Nearest entry, scaled linearly in d.
    int best_d = overhead_ns_per_vec.begin()->first;
    for (const auto& [kd, ns] : overhead_ns_per_vec) {
        (void)ns;
        if (std::abs(kd - d) < std::abs(best_d - d)) best_d = kd;
    }
    return overhead_ns_per_vec.at(best_d) * static_cast<double>(d) / static_cast<double>(best_d);
}

std::uint64_t flops_per_vec(int d) {
    if (!is_pow2(static_cast<std::uint64_t>(d)))
        throw_error(ErrorKind::Dimension, "flops_per_vec: d must be a power of two");
    return 5ULL * static_cast<std::uint64_t>(d) *
           static_cast<std::uint64_t>(log2_exact(static_cast<std::uint64_t>(d)));
}

DecodeStepCost decode_step_cost(const CostModel& model, const DecodeStepSizes& sizes) {
    model.validate();
    if (sizes.fp16_cache_bytes < 0 || sizes.int4_cache_bytes < 0 || sizes.baseline_bytes < 0 ||
        sizes.kernel_vecs < 0)
        throw_error(ErrorKind::Range, "decode_step_cost: sizes must be non-negative");
    const double ns_per_byte = 1.0 / model.bandwidth_gbps;  // GB/s == bytes/ns
    DecodeStepCost cost;
    cost.ns_fp16 = (sizes.baseline_bytes + sizes.fp16_cache_bytes) * ns_per_byte;
    cost.ns_int4 = (sizes.baseline_bytes + sizes.int4_cache_bytes) * ns_per_byte +
                   sizes.kernel_vecs * model.overhead_for(sizes.d) + model.dispatch_ns;
    cost.delta_pct = cost.ns_fp16 > 0.0 ? 100.0 * (cost.ns_int4 - cost.ns_fp16) / cost.ns_fp16
                                        : 0.0;
    return cost;
}

double crossover_overhead_ns(const CostModel& model, const DecodeStepSizes& sizes) {
    if (sizes.kernel_vecs <= 0.0)
        throw_error(ErrorKind::Range, "crossover_overhead_ns: kernel_vecs must be positive");
    double bytes_saved = sizes.fp16_cache_bytes - sizes.int4_cache_bytes;
    return (bytes_saved / model.bandwidth_gbps - model.dispatch_ns) / sizes.kernel_vecs;
}

namespace {

std::uint64_t pipeline_bytes_per_vec(const QuantScheme& scheme) {
    // fp32 input plus the stored codes and scales.
    std::uint64_t d = static_cast<std::uint64_t>(scheme.d);
    std::uint64_t out = scheme.bits == 4 ? d / 2 : d;
    std::uint64_t scales = granularity_uses_group(scheme.granularity)
                               ? 4 * (d / static_cast<std::uint64_t>(scheme.group))
                               : 4;
    return 4 * d + out + scales;
}

}  // namespace

BenchResult microbench_transform_quant(const BenchConfig& config, std::uint64_t n_vec,
                                       int repeats) {
    if (n_vec == 0 || repeats < 1)
        throw_error(ErrorKind::Range, "microbench: n_vec and repeats must be positive");
    QuantScheme scheme;
    scheme.bits = config.bits;
    scheme.granularity = config.granularity;
    scheme.group = config.group;
    scheme.d = config.d;
    validate_scheme(scheme);
    TransformSpec spec = make_spec(TransformKind::Srft, config.d, config.seed);

    std::vector<float> input(n_vec * static_cast<std::uint64_t>(config.d));
    for (std::size_t i = 0; i < input.size(); ++i)
        input[i] = static_cast<float>(keyed_normal(config.seed ^ 0x5EEDULL, i));
    std::vector<float> transformed(input.size());

    auto run_once = [&]() {
        transform_forward_batch<float>(spec, input.data(), n_vec, transformed.data());
        QuantizedBlock block = quantize(scheme, transformed.data(), n_vec);
        // Touch the output so the work cannot be elided.
        volatile std::uint8_t sink = block.codes.empty() ? 0 : block.codes.back();
        (void)sink;
    };

    run_once();  // warm-up
    std::vector<double> times(repeats);
    for (int r = 0; r < repeats; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        run_once();
        auto t1 = std::chrono::steady_clock::now();
        times[r] = std::chrono::duration<double, std::nano>(t1 - t0).count();
    }
    std::sort(times.begin(), times.end());
    double median = times[repeats / 2];
    if (repeats % 2 == 0) median = 0.5 * (times[repeats / 2 - 1] + times[repeats / 2]);

    BenchResult res;
    res.label = "srft_quant_d" + std::to_string(config.d) + "_int" + std::to_string(config.bits) +
                (granularity_uses_group(config.granularity)
                     ? "_g" + std::to_string(config.group)
                     : "");
    res.n_vec = n_vec;
    res.repeats = repeats;
    res.ns_per_vec = median / static_cast<double>(n_vec);
    res.gflops = static_cast<double>(flops_per_vec(config.d)) / res.ns_per_vec;
    res.gbps = static_cast<double>(pipeline_bytes_per_vec(scheme)) / res.ns_per_vec;
    // A single repeat has no spread to report; NaN marks it as flagged.
    res.dispersion_pct = repeats >= 2
                             ? 100.0 * (times.back() - times.front()) / median
                             : std::numeric_limits<double>::quiet_NaN();
    res.low_resolution = median < 1e4;  // < 10 us total: clock granularity territory
    return res;
}

std::vector<BenchResult> microbench_sweep(const BenchConfig& config,
                                          const std::vector<std::uint64_t>& n_vecs, int repeats) {
    std::vector<BenchResult> out;
    out.reserve(n_vecs.size());
    for (std::uint64_t n : n_vecs) out.push_back(microbench_transform_quant(config, n, repeats));
    return out;
}

}  // namespace rkvq

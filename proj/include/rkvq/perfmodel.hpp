// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rkvq/quantize.hpp"

namespace rkvq {

// Unified-memory bandwidth cost model. Defaults are M1-flavored CLI inputs,
// not fitted constants: the model predicts sign and order of magnitude.
struct CostModel {
    double bandwidth_gbps = 60.0;                 // effective stream bandwidth
    std::map<int, double> overhead_ns_per_vec = {  // fused-pipeline cost per vector
        {64, 13.0}, {128, 25.0}, {256, 50.0}};
    double dispatch_ns = 1000.0;  // fixed extra dispatch per quantized op

    // Exact table entry when present; otherwise scaled linearly in d from
    // the nearest table entry.
    double overhead_for(int d) const;
    void validate() const;
};

// FLOP accounting convention: 5 * d * log2(d) per vector. Under it the
// ns/vec and GFLOPS columns of a BenchResult are mutually consistent.
std::uint64_t flops_per_vec(int d);

struct BenchResult {
    std::string label;
    std::uint64_t n_vec = 0;
    double ns_per_vec = 0.0;
    double gflops = 0.0;  // flops_per_vec(d) / ns_per_vec, by convention
    double gbps = 0.0;    // bytes touched / ns
    int repeats = 0;
    double dispersion_pct = 0.0;  // (max - min) / median over repeats
    bool low_resolution = false;  // timer granularity too coarse to trust
};

// One decode step, priced analytically:
//   ns_fp16 = (baseline + fp16_cache) / BW
//   ns_int4 = (baseline + int4_cache) / BW + kernel_vecs * overhead(d) + dispatch
// so delta_pct = 0 exactly when
//   kernel_vecs * overhead + dispatch == (fp16_cache - int4_cache) / BW.
struct DecodeStepSizes {
    double baseline_bytes = 0.0;    // weights/activations streamed on both paths
    double fp16_cache_bytes = 0.0;
    double int4_cache_bytes = 0.0;
    double kernel_vecs = 0.0;       // vectors the fused kernel processes (amortized)
    int d = 128;
};

struct DecodeStepCost {
    double ns_fp16 = 0.0;
    double ns_int4 = 0.0;
    double delta_pct = 0.0;  // (ns_int4 - ns_fp16) / ns_fp16 * 100
};

DecodeStepCost decode_step_cost(const CostModel& model, const DecodeStepSizes& sizes);

// Overhead (ns/vec) at which the int4 and fp16 step costs cross.
double crossover_overhead_ns(const CostModel& model, const DecodeStepSizes& sizes);

// Microbenchmark of this library's own transform + quantize pipeline
// (median of `repeats` timed runs after one warm-up, single worker).
struct BenchConfig {
    int d = 64;
    int bits = 8;
    Granularity granularity = Granularity::PerToken;
    int group = 0;
    std::uint64_t seed = 0;
};

BenchResult microbench_transform_quant(const BenchConfig& config, std::uint64_t n_vec,
                                       int repeats);
std::vector<BenchResult> microbench_sweep(const BenchConfig& config,
                                          const std::vector<std::uint64_t>& n_vecs, int repeats);

}  // namespace rkvq

// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rkvq/diagnostics.hpp"
#include "rkvq/quantize.hpp"
#include "rkvq/transform.hpp"

namespace rkvq {

enum class RotationKind { ScaleOnly, Cayley, Householder, NoSrftCayley };

RotationKind rotation_kind_from_name(const std::string& name);
std::string rotation_kind_name(RotationKind k);

// Learned calibration state. Optimizer-side parameters are kept in float64;
// cached_r is the materialized rotation, cast to float32.
struct RotationParams {
    RotationKind kind = RotationKind::ScaleOnly;
    int d = 0;
    int k = 0;                         // reflector count (Householder only)
    std::vector<double> lambda;        // length d, clamped at 1e-6
    std::vector<double> generator;     // d x d row-major U (Cayley kinds)
    std::vector<double> reflectors;    // k x d row-major (Householder)
    std::vector<float> cached_r;       // d x d row-major orthogonal R

    bool has_rotation() const { return kind != RotationKind::ScaleOnly; }
    ChannelScale channel_scale() const;  // float32 view of lambda
};

// ScaleOnly = d, Cayley = d^2, Householder = k*d + d.
std::size_t param_count(const RotationParams& params);

struct CalibConfig {
    int steps = 300;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    QuantScheme scheme;  // target bit width + granularity (non-lambda kinds)
    std::uint64_t seed = 0;
    int reflectors = 0;  // Householder k; 0 means d/2
};

struct FitReport {
    double mse_initial = 0.0;
    double mse_final = 0.0;
    double reduction_pct = 0.0;
    int steps_run = 0;
    int best_step = 0;  // step index whose parameters were kept
};

// exp(U - U^T) by scaling-and-squaring with a truncated series, float64.
// Result is orthogonal to machine precision.
std::vector<double> expm_skew(const std::vector<double>& u, int d);

// H_1 * ... * H_k with H_i = I - 2 v_i v_i^T / |v_i|^2. Throws
// DegenerateReflector on a zero reflector.
std::vector<double> householder_compose(const std::vector<double>& reflectors, int k, int d);

// Optional stages of the reconstruction pipeline:
//   forward: transform? -> R? -> lambda -> quantize
//   inverse mirrors it.
struct PipelineSpec {
    const TransformSpec* transform = nullptr;
    const std::vector<double>* rotation = nullptr;  // d x d row-major
    const ChannelScale* lambda = nullptr;           // absent = all ones
};

// Mean over the batch of |pipeline_roundtrip(x) - x|^2 (squared L2 per
// vector, averaged over vectors). The scheme must not itself be a
// PerChannel* granularity; the pipeline's lambda plays that role.
double reconstruction_mse(const PipelineSpec& pipeline, const QuantScheme& scheme,
                          const float* x, std::size_t n);

// Post-training calibration: Adam on the straight-through surrogate
// gradient, keeping the best-MSE iterate so mse_final <= mse_initial.
// X is transformed-domain activations (raw for NoSrftCayley). Throws
// Divergence if the running MSE exceeds 10x the initial.
std::pair<RotationParams, FitReport> fit(RotationKind kind, const CalibConfig& config,
                                         const ActivationBatch& x);

// lambda[c] = 1 / max_t |X[t,c]|, clamped below at 1e-6.
ChannelScale lambda_from_channel_max(const float* x_transformed, std::size_t n, std::size_t d);
ChannelScale lambda_from_channel_max(const ActivationBatch& batch);

// RotationParams file round-trip ("RKVC" format, float32 payload).
void save_rotation_params(const RotationParams& params, const std::string& path);
RotationParams load_rotation_params(const std::string& path);

// --- differentiable core -------------------------------------------------
// The loss/gradient engine that fit() descends. Exposed so the gradient
// check can run the same adjoints against central finite differences.
namespace calib {

enum class QuantMode {
    Exact,        // real round-and-clamp quantizer, dynamic scales
    SmoothClamp,  // no rounding; clamp against externally frozen scales
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> d_lambda;
    std::vector<double> d_generator;
    std::vector<double> d_reflectors;
};

// x is row-major n x d float64 (already in the domain the parameters act
// on). frozen_scales (SmoothClamp only): one scale per scaling unit per
// vector, laid out like QuantizedBlock scales.
LossGrad loss_and_grad(const RotationParams& params, const QuantScheme& scheme, const double* x,
                       std::size_t n, QuantMode mode,
                       const std::vector<double>* frozen_scales = nullptr);

double loss_only(const RotationParams& params, const QuantScheme& scheme, const double* x,
                 std::size_t n, QuantMode mode,
                 const std::vector<double>* frozen_scales = nullptr);

// Scales the Exact quantizer would use on the batch mapped through the
// current parameters; handy for freezing SmoothClamp scales.
std::vector<double> unit_scales(const RotationParams& params, const QuantScheme& scheme,
                                const double* x, std::size_t n);

}  // namespace calib

}  // namespace rkvq

// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#include "rkvq/quantize.hpp"

#include <cmath>
#include <cstring>

namespace rkvq {

void validate_scheme(const QuantScheme& scheme) {
    if (scheme.bits != 3 && scheme.bits != 4 && scheme.bits != 6 && scheme.bits != 8)
        throw_error(ErrorKind::Config, "bits must be one of {3,4,6,8}, got " +
                                           std::to_string(scheme.bits));
    if (scheme.d <= 0)
        throw_error(ErrorKind::Config, "scheme.d must be positive");
    if (scheme.bits == 4 && scheme.d % 2 != 0)
        throw_error(ErrorKind::Config, "4-bit nibble packing needs even d");
    if (granularity_uses_group(scheme.granularity)) {
        if (scheme.group <= 0 || scheme.d % scheme.group != 0)
            throw_error(ErrorKind::Config, "group must divide d (d=" + std::to_string(scheme.d) +
                                               ", group=" + std::to_string(scheme.group) + ")");
        if (scheme.bits == 4 && scheme.group % 2 != 0)
            throw_error(ErrorKind::Config, "4-bit nibble packing needs an even group size");
    }
}

namespace {

inline std::int8_t clamp_code(long v, int qmax) {
    if (v > qmax) return static_cast<std::int8_t>(qmax);
    if (v < -qmax) return static_cast<std::int8_t>(-qmax);
    return static_cast<std::int8_t>(v);
}

void check_lambda(const QuantScheme& scheme, const ChannelScale* lambda) {
    if (granularity_uses_lambda(scheme.granularity)) {
        if (lambda == nullptr)
            throw_error(ErrorKind::Config,
                        "per-channel scheme requires a lambda (calibrated or dynamic)");
        if (static_cast<int>(lambda->lambda.size()) != scheme.d)
            throw_error(ErrorKind::Shape, "lambda length " + std::to_string(lambda->lambda.size()) +
                                              " != d " + std::to_string(scheme.d));
    } else if (lambda != nullptr) {
        throw_error(ErrorKind::Config, "lambda given but the scheme has no per-channel factor");
    }
}

}  // namespace

QuantizedBlock quantize(const QuantScheme& scheme, const float* x, std::uint64_t n_vec,
                        const ChannelScale* lambda) {
    validate_scheme(scheme);
    check_lambda(scheme, lambda);
    if (n_vec == 0) throw_error(ErrorKind::Range, "quantize: empty batch");

    const int d = scheme.d;
    const int qmax = quant_max(scheme.bits);
    const bool use_lambda = granularity_uses_lambda(scheme.granularity);
    const int unit = scheme.unit_width();
    const int units_per_vec = d / unit;

    QuantizedBlock block;
    block.scheme = scheme;
    block.n_vec = n_vec;
    block.codes.resize(n_vec * block.codes_bytes_per_vec());
    block.scales.resize(scheme.granularity == Granularity::PerTensor ? 1
                                                                     : n_vec * units_per_vec);
    if (use_lambda) {
        block.lambda = lambda->lambda;
        for (float& l : block.lambda) l = std::max(l, kLambdaFloor);
    }

    for (std::uint64_t i = 0; i < n_vec * static_cast<std::uint64_t>(d); ++i) {
        if (!std::isfinite(x[i]))
            throw_error(ErrorKind::Data, "quantize: non-finite input at index " +
                                             std::to_string(i));
    }

    std::vector<float> scaled(use_lambda ? d : 0);

    float tensor_absmax = 0.0f;
    if (scheme.granularity == Granularity::PerTensor) {
        for (std::uint64_t i = 0; i < n_vec * static_cast<std::uint64_t>(d); ++i) {
            float a = std::fabs(x[i]);
            if (a > tensor_absmax) tensor_absmax = a;
        }
        block.scales[0] = tensor_absmax / static_cast<float>(qmax);
    }

    for (std::uint64_t v = 0; v < n_vec; ++v) {
        const float* row = x + v * static_cast<std::uint64_t>(d);
        const float* src = row;
        if (use_lambda) {
            for (int c = 0; c < d; ++c) scaled[c] = row[c] * block.lambda[c];
            src = scaled.data();
        }
        std::uint8_t* dst = block.codes.data() + v * block.codes_bytes_per_vec();
        for (int u = 0; u < units_per_vec; ++u) {
            const float* g = src + u * unit;
            float scale;
            if (scheme.granularity == Granularity::PerTensor) {
                scale = block.scales[0];
            } else {
                float absmax = 0.0f;
                for (int c = 0; c < unit; ++c) {
                    float a = std::fabs(g[c]);
                    if (a > absmax) absmax = a;
                }
                scale = absmax / static_cast<float>(qmax);
                block.scales[v * units_per_vec + u] = scale;
            }
            if (scale == 0.0f) {
                std::memset(dst + (scheme.bits == 4 ? u * unit / 2 : u * unit), 0,
                            scheme.bits == 4 ? unit / 2 : unit);
                continue;
            }
            const float inv = 1.0f / scale;
            if (scheme.bits == 4) {
                // Nibble-pack as we quantize; the clamp keeps codes in [-7, 7].
                std::uint8_t* out = dst + u * unit / 2;
                for (int c = 0; c < unit; c += 2) {
                    std::uint8_t lo =
                        static_cast<std::uint8_t>(clamp_code(std::lroundf(g[c] * inv), qmax));
                    std::uint8_t hi =
                        static_cast<std::uint8_t>(clamp_code(std::lroundf(g[c + 1] * inv), qmax));
                    out[c / 2] = static_cast<std::uint8_t>((hi << 4) | (lo & 0xF));
                }
            } else {
                std::uint8_t* out = dst + u * unit;
                for (int c = 0; c < unit; ++c)
                    out[c] =
                        static_cast<std::uint8_t>(clamp_code(std::lroundf(g[c] * inv), qmax));
            }
        }
    }
    return block;
}

void dequantize(const QuantizedBlock& block, float* out, const ChannelScale* lambda_override) {
    const QuantScheme& scheme = block.scheme;
    const int d = scheme.d;
    const int unit = scheme.unit_width();
    const int units_per_vec = d / unit;
    const bool use_lambda = granularity_uses_lambda(scheme.granularity);

    const std::vector<float>* lam = use_lambda ? &block.lambda : nullptr;
    if (lambda_override != nullptr) {
        if (!use_lambda)
            throw_error(ErrorKind::Config, "lambda override on a scheme without per-channel factor");
        if (static_cast<int>(lambda_override->lambda.size()) != d)
            throw_error(ErrorKind::Shape, "lambda override length mismatch");
        lam = &lambda_override->lambda;
    }
    if (use_lambda && static_cast<int>(lam->size()) != d)
        throw_error(ErrorKind::Shape, "block lambda length mismatch");

    std::vector<std::int8_t> q(d);
    for (std::uint64_t v = 0; v < block.n_vec; ++v) {
        const std::uint8_t* src = block.codes.data() + v * block.codes_bytes_per_vec();
        if (scheme.bits == 4) {
            unpack_nibbles({src, static_cast<std::size_t>(d / 2)},
                           {q.data(), static_cast<std::size_t>(d)});
        } else {
            for (int c = 0; c < d; ++c) q[c] = static_cast<std::int8_t>(src[c]);
        }
        float* dst = out + v * static_cast<std::uint64_t>(d);
        for (int u = 0; u < units_per_vec; ++u) {
            float scale = scheme.granularity == Granularity::PerTensor
                              ? block.scales[0]
                              : block.scales[v * units_per_vec + u];
            for (int c = 0; c < unit; ++c) {
                int idx = u * unit + c;
                float val = static_cast<float>(q[idx]) * scale;
                dst[idx] = use_lambda ? val / (*lam)[idx] : val;
            }
        }
    }
}

std::vector<float> dequantize(const QuantizedBlock& block, const ChannelScale* lambda_override) {
    std::vector<float> out(block.n_vec * static_cast<std::uint64_t>(block.scheme.d));
    dequantize(block, out.data(), lambda_override);
    return out;
}

void pack_nibbles(std::span<const std::int8_t> codes, std::span<std::uint8_t> out) {
    if (codes.size() % 2 != 0)
        throw_error(ErrorKind::Shape, "pack_nibbles: odd number of codes");
    if (out.size() != codes.size() / 2)
        throw_error(ErrorKind::Shape, "pack_nibbles: output buffer size mismatch");
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] < -8 || codes[i] > 7)
            throw_error(ErrorKind::Range, "pack_nibbles: code " + std::to_string(codes[i]) +
                                              " outside [-8, 7]");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<std::uint8_t>((static_cast<std::uint8_t>(codes[2 * i + 1]) << 4) |
                                           (static_cast<std::uint8_t>(codes[2 * i]) & 0xF));
    }
}

void unpack_nibbles(std::span<const std::uint8_t> buf, std::span<std::int8_t> out) {
    if (out.size() != buf.size() * 2)
        throw_error(ErrorKind::Shape, "unpack_nibbles: output buffer size mismatch");
    for (std::size_t i = 0; i < buf.size(); ++i) {
        // Shift-based sign extension for both nibbles.
        out[2 * i] = static_cast<std::int8_t>(static_cast<std::int8_t>(buf[i] << 4) >> 4);
        out[2 * i + 1] = static_cast<std::int8_t>(static_cast<std::int8_t>(buf[i]) >> 4);
    }
}

std::vector<std::uint8_t> pack_nibbles(std::span<const std::int8_t> codes) {
    std::vector<std::uint8_t> out(codes.size() / 2);
    pack_nibbles(codes, {out.data(), out.size()});
    return out;
}

std::vector<std::int8_t> unpack_nibbles(std::span<const std::uint8_t> buf, std::size_t n_values) {
    if (n_values != buf.size() * 2)
        throw_error(ErrorKind::Shape, "unpack_nibbles: n_values must be 2x buffer size");
    std::vector<std::int8_t> out(n_values);
    unpack_nibbles(buf, {out.data(), out.size()});
    return out;
}

double compression_ratio(const QuantScheme& scheme, std::uint64_t n_vec) {
    validate_scheme(scheme);
    const double d = static_cast<double>(scheme.d);
    const double fp16_bytes = 2.0 * d;
    double codes = scheme.bits == 4 ? d / 2.0 : d;
    double scales = 0.0;
    switch (scheme.granularity) {
        case Granularity::PerToken:
        case Granularity::PerChannel: scales = 4.0; break;
        case Granularity::PerTensor:
            scales = n_vec == kUnboundedVecs ? 0.0 : 4.0 / static_cast<double>(n_vec);
            break;
        case Granularity::PerGroup:
        case Granularity::PerChannelPlusGroup:
            scales = 4.0 * d / static_cast<double>(scheme.group);
            break;
    }
    double lam = 0.0;
    if (granularity_uses_lambda(scheme.granularity) && n_vec != kUnboundedVecs)
        lam = 4.0 * d / static_cast<double>(n_vec);
    return fp16_bytes / (codes + scales + lam);
}

std::uint64_t block_payload_bytes(const QuantScheme& scheme, std::uint64_t n_vec,
                                  bool lambda_present) {
    validate_scheme(scheme);
    const std::uint64_t d = static_cast<std::uint64_t>(scheme.d);
    std::uint64_t codes = scheme.bits == 4 ? n_vec * d / 2 : n_vec * d;
    std::uint64_t scales;
    switch (scheme.granularity) {
        case Granularity::PerTensor: scales = 4; break;
        case Granularity::PerGroup:
        case Granularity::PerChannelPlusGroup:
            scales = 4 * n_vec * (d / static_cast<std::uint64_t>(scheme.group));
            break;
        default: scales = 4 * n_vec; break;
    }
    std::uint64_t lam = lambda_present ? 4 * d : 0;
    return codes + scales + lam;
}

}  // namespace rkvq

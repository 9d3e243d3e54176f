// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "rkvq/common.hpp"

namespace rkvq {

enum class Granularity {
    PerToken,             // one scale per d-vector
    PerTensor,            // one scale for the whole block
    PerChannel,           // lambda rescale, then one scale per vector
    PerGroup,             // one scale per g-coordinate group per vector
    PerChannelPlusGroup,  // lambda rescale, then per-group scales
};

inline bool granularity_uses_lambda(Granularity g) {
    return g == Granularity::PerChannel || g == Granularity::PerChannelPlusGroup;
}
inline bool granularity_uses_group(Granularity g) {
    return g == Granularity::PerGroup || g == Granularity::PerChannelPlusGroup;
}

struct QuantScheme {
    int bits = 4;  // one of {3, 4, 6, 8}
    Granularity granularity = Granularity::PerToken;
    int group = 0;  // g; must divide d when used (canonical 16 and 32)
    int d = 0;

    // Effective scaling-group width: d for vector-wide scales, g otherwise.
    int unit_width() const { return granularity_uses_group(granularity) ? group : d; }
};

void validate_scheme(const QuantScheme& scheme);

inline int quant_max(int bits) { return (1 << (bits - 1)) - 1; }

// Per-coordinate rescale applied post-transform; entries clamped at 1e-6.
struct ChannelScale {
    std::vector<float> lambda;
};

constexpr float kLambdaFloor = 1e-6f;

// Packed integer codes plus scale payload for a batch of vectors. 4-bit
// codes are nibble-packed (low nibble = even index); 3/6/8-bit codes are
// one byte per value. Scales layout: 1 per vector (PerToken/PerChannel),
// 1 per block (PerTensor), d/g per vector (PerGroup/PerChannelPlusGroup).
struct QuantizedBlock {
    QuantScheme scheme;
    std::uint64_t n_vec = 0;
    std::vector<std::uint8_t> codes;
    std::vector<float> scales;
    std::vector<float> lambda;  // empty unless the scheme is PerChannel*

    std::size_t codes_bytes_per_vec() const {
        return scheme.bits == 4 ? static_cast<std::size_t>(scheme.d) / 2
                                : static_cast<std::size_t>(scheme.d);
    }
    std::size_t scales_per_vec() const {
        return granularity_uses_group(scheme.granularity)
                   ? static_cast<std::size_t>(scheme.d / scheme.group)
                   : 1;
    }
};

// Uniform symmetric quantization: per scaling unit u, scale_u =
// absmax(u) / (2^(bits-1) - 1), code = round-half-away(value / scale_u)
// clamped to +/-(2^(bits-1)-1). PerChannel* multiplies by lambda before the
// absmax. X is row-major n_vec x d. NaN/Inf input throws a Data error.
QuantizedBlock quantize(const QuantScheme& scheme, const float* x, std::uint64_t n_vec,
                        const ChannelScale* lambda = nullptr);

// Exact inverse of the packing: value = code * scale, then / lambda for
// PerChannel* schemes. `lambda_override` (when given) must match in length.
void dequantize(const QuantizedBlock& block, float* out,
                const ChannelScale* lambda_override = nullptr);
std::vector<float> dequantize(const QuantizedBlock& block,
                              const ChannelScale* lambda_override = nullptr);

// Two's-complement nibble packing: byte = (q[2i+1] << 4) | (q[2i] & 0xF).
// Codes must lie in [-8, 7]; -8 round-trips even though the symmetric
// quantizer never emits it.
void pack_nibbles(std::span<const std::int8_t> codes, std::span<std::uint8_t> out);
void unpack_nibbles(std::span<const std::uint8_t> buf, std::span<std::int8_t> out);
std::vector<std::uint8_t> pack_nibbles(std::span<const std::int8_t> codes);
std::vector<std::int8_t> unpack_nibbles(std::span<const std::uint8_t> buf, std::size_t n_values);

// fp16 bytes per vector divided by (codes + scales + amortized lambda)
// bytes per vector. Pass n_vec for the lambda/per-tensor amortization;
// the default treats the block as unbounded (amortized terms -> 0).
constexpr std::uint64_t kUnboundedVecs = std::numeric_limits<std::uint64_t>::max();
double compression_ratio(const QuantScheme& scheme, std::uint64_t n_vec = kUnboundedVecs);

// Bytes of payload a block of n_vec vectors occupies (codes + scales +
// lambda), i.e. what persistent storage pays. Header bytes excluded.
std::uint64_t block_payload_bytes(const QuantScheme& scheme, std::uint64_t n_vec,
                                  bool lambda_present);

}  // namespace rkvq

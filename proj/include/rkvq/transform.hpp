// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rkvq/common.hpp"

namespace rkvq {

enum class TransformKind { Srft, Srht, Identity };

// Immutable description of one orthonormal transform. `signs` is a pure
// function of (kind, d, seed); Identity always gets all-(+1) signs.
struct TransformSpec {
    TransformKind kind = TransformKind::Srft;
    int d = 0;
    std::uint64_t seed = 0;
    std::vector<std::int8_t> signs;  // each entry is +1 or -1
};

// d must be a power of two in [4, 4096].
TransformSpec make_spec(TransformKind kind, int d, std::uint64_t seed);

// Forward = pack(F . diag(s) . x) with F the unitary DFT and the packed
// real representation using sqrt(2)-scaled middle bins; the composite map
// is exactly orthonormal. Inverse is unpack -> inverse rfft -> apply s.
// Both float32 (contract precision) and float64 paths are provided.
template <typename T>
void srft_forward(const TransformSpec& spec, std::span<const T> x, std::span<T> out);
template <typename T>
void srft_inverse(const TransformSpec& spec, std::span<const T> y, std::span<T> out);

// (1/sqrt(d)) . H_d . diag(s) and its transpose.
template <typename T>
void srht_forward(const TransformSpec& spec, std::span<const T> x, std::span<T> out);
template <typename T>
void srht_inverse(const TransformSpec& spec, std::span<const T> y, std::span<T> out);

// Dispatch on spec.kind (Identity = copy).
template <typename T>
void transform_forward(const TransformSpec& spec, std::span<const T> x, std::span<T> out);
template <typename T>
void transform_inverse(const TransformSpec& spec, std::span<const T> y, std::span<T> out);

// Row-major n x d batches. One internal plan is built per call, so these are
// the entry points to benchmark.
template <typename T>
void transform_forward_batch(const TransformSpec& spec, const T* x, std::size_t n, T* out);
template <typename T>
void transform_inverse_batch(const TransformSpec& spec, const T* y, std::size_t n, T* out);

// Convenience single-vector versions.
std::vector<float> transform_forward(const TransformSpec& spec, std::span<const float> x);
std::vector<float> transform_inverse(const TransformSpec& spec, std::span<const float> y);

// Pooled excess kurtosis of the raw batch and of the transformed batch
// (row-major n x d). Throws UndefinedMoment on a constant batch.
std::pair<double, double> gaussianization_score(const TransformSpec& spec, const float* x,
                                                std::size_t n);

// Unnormalized in-place Walsh-Hadamard butterfly; exposed for the d=2
// closed-form checks (make_spec itself requires d >= 4).
template <typename T>
void walsh_hadamard_inplace(T* v, int d);

}  // namespace rkvq

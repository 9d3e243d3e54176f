// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rkvq/quantize.hpp"
#include "rkvq/transform.hpp"

// Brute-force references the fast paths are validated against. Everything
// here is straight-line float64 code and shares no implementation with the
// kernels it checks (types are shared, code paths are not).
namespace rkvq::oracle {

struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;  // row-major

    DenseMatrix() = default;
    DenseMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
};

std::vector<double> matvec(const DenseMatrix& m, const std::vector<double>& x);

// Column j = packed transform of e_j, via direct DFT summation (no FFT).
// d <= 1024 (memory guard). Satisfies M^T M = I to 1e-10 in float64.
DenseMatrix dense_srft_matrix(const TransformSpec& spec);
DenseMatrix dense_srht_matrix(const TransformSpec& spec);

// Straight-line scalar-loop quantizer: double-precision absmax and scale,
// round-half-away-from-zero, its own nibble packing.
QuantizedBlock scalar_quantize_reference(const QuantScheme& scheme, const float* x,
                                         std::uint64_t n_vec,
                                         const ChannelScale* lambda = nullptr);

struct CrossvalReport {
    std::string config;
    std::uint64_t n_compared = 0;
    std::uint64_t n_identical = 0;
    std::uint64_t n_ties = 0;   // off-by-one disagreements at a half-LSB boundary
    std::uint64_t n_other = 0;  // disagreements that are NOT boundary ties
    double pct_identical = 0.0;
    double max_scale_rel_err = 0.0;
};

// Runs the fast quantizer and the scalar reference on the same batch and
// classifies every code disagreement.
CrossvalReport crossval_quantize(const QuantScheme& scheme, const float* x, std::uint64_t n_vec,
                                 const ChannelScale* lambda = nullptr);

// The length-8 complex DFT expressed as a 16x16 real matrix acting on
// interleaved (re, im) pairs, with unitary normalization (the matrix is
// orthogonal). max_abs_err is measured against a direct DFT summation over
// n_checked random inputs.
struct Dft8Report {
    DenseMatrix matrix;  // 16 x 16
    double max_abs_err = 0.0;
    int n_checked = 0;
};
Dft8Report dft8_as_matmul(int n_checked = 1000, std::uint64_t seed = 0);

}  // namespace rkvq::oracle

// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <iosfwd>
#include <string>

#include "rkvq/diagnostics.hpp"
#include "rkvq/kvcache.hpp"
#include "rkvq/quantize.hpp"

// All formats are little-endian.
//
// Packed block ("RKVQ"): magic, version u32 = 1, d u32, bits u32, group u32
// (0 = per-token family), n_vec u64, flags u32 (bit0 = lambda present,
// bit1 = per-tensor scale layout); then optional lambda (d x f32), then the
// per-vector scale payload, then the codes.
//
// Activation batch ("RKVA"): magic, n u32, d u32, then n*d float32.
//
// Cache snapshot ("RKVS"): magic, version u32 = 1, the cache config, then
// per layer the K and V packed blocks, the dynamic per-epoch lambdas, and
// the raw residual dump.
namespace rkvq {

void save_block(std::ostream& out, const QuantizedBlock& block);
QuantizedBlock load_block(std::istream& in);
void save_block(const QuantizedBlock& block, const std::string& path);
QuantizedBlock load_block(const std::string& path);

void save_activations(const ActivationBatch& batch, const std::string& path);
ActivationBatch load_activations(const std::string& path);

void save_cache(const KvCache& cache, const std::string& path);
KvCache load_cache(const std::string& path);

}  // namespace rkvq

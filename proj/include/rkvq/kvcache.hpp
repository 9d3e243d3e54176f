// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rkvq/perfmodel.hpp"
#include "rkvq/quantize.hpp"
#include "rkvq/transform.hpp"

namespace rkvq {

enum class LambdaSource { None, Calibrated, Dynamic };

struct CacheConfig {
    int d = 64;
    int n_layers = 1;
    int n_kv_heads = 1;
    QuantScheme scheme;  // per-vector decomposable (PerTensor is rejected)
    int window = 16;     // W: fp16 residual tokens kept before a flush
    LambdaSource lambda_source = LambdaSource::None;
    TransformKind transform = TransformKind::Srft;
    std::uint64_t seed = 0;
};

struct CacheCounters {
    std::uint64_t updates = 0;
    std::uint64_t flushes = 0;
    std::uint64_t dequant_rebuilds = 0;
};

// What read() hands back: prefix tokens (inverse-transformed, dequantized)
// followed by residual tokens (bit-exact originals), insertion order.
// Row stride is n_kv_heads * d.
struct KvView {
    const float* prefix_k = nullptr;
    const float* prefix_v = nullptr;
    std::size_t prefix_tokens = 0;
    const float* residual_k = nullptr;
    const float* residual_v = nullptr;
    std::size_t residual_tokens = 0;
    std::size_t row_width = 0;

    std::size_t n_tokens() const { return prefix_tokens + residual_tokens; }
    std::vector<float> k_matrix() const;
    std::vector<float> v_matrix() const;
};

struct MemoryReport {
    std::uint64_t bytes_fp16_equivalent = 0;
    std::uint64_t bytes_actual = 0;          // persistent payload + residual ring at fp16
    std::uint64_t bytes_transient_memo = 0;  // dequant-prefix memo, flagged separately
    double ratio = 1.0;
    bool empty = false;
};

// Per-layer container: quantized prefix, fp16 residual window with
// flush-on-full re-quantization, and a dequant-prefix memo that makes
// update() O(1) amortized in prefix length. Single-writer; reads must not
// interleave with an in-progress update. Distinct layers are independent.
class KvCacheLayer {
public:
    KvCacheLayer(const CacheConfig& config, std::optional<ChannelScale> lambda_k = {},
                 std::optional<ChannelScale> lambda_v = {});

    // One token: k and v each hold n_kv_heads * d values.
    void update(std::span<const float> k_row, std::span<const float> v_row);

    // Rebuilds the memo only when a flush has invalidated it.
    KvView read();

    const CacheCounters& counters() const { return counters_; }
    std::size_t prefix_tokens() const { return prefix_rows_ / heads_; }
    std::size_t residual_tokens() const { return residual_rows_; }
    const CacheConfig& config() const { return config_; }

    std::uint64_t bytes_persistent() const;
    std::uint64_t bytes_residual_capacity() const;  // priced at 2 bytes/value
    std::uint64_t bytes_memo() const;               // priced at 2 bytes/value

    // Fresh dequantization of the stored prefix, bypassing the memo; the
    // memo-coherence check compares this byte-for-byte against the memo.
    std::vector<float> dequant_prefix_fresh(bool key_side) const;

    // Serialization hooks (cache snapshot format).
    const QuantizedBlock& prefix_block(bool key_side) const { return key_side ? k_block_ : v_block_; }
    const std::optional<ChannelScale>& calibrated_lambda(bool key_side) const {
        return key_side ? lambda_k_ : lambda_v_;
    }
    std::span<const float> residual_raw(bool key_side) const;
    const std::vector<std::vector<float>>& epoch_lambdas(bool key_side) const {
        return key_side ? epoch_lambdas_k_ : epoch_lambdas_v_;
    }
    void restore(QuantizedBlock k_block, QuantizedBlock v_block, std::vector<float> res_k,
                 std::vector<float> res_v, std::vector<std::vector<float>> eplam_k,
                 std::vector<std::vector<float>> eplam_v);

private:
    void flush();
    void rebuild_memo();
    void dequant_into(bool key_side, std::vector<float>& out) const;

    CacheConfig config_;
    TransformSpec spec_;
    int heads_ = 1;
    std::size_t width_ = 0;  // heads * d
    std::optional<ChannelScale> lambda_k_, lambda_v_;

    QuantizedBlock k_block_, v_block_;  // n_vec = prefix_tokens * heads
    std::size_t prefix_rows_ = 0;       // quantized d-vectors per side
    std::vector<std::vector<float>> epoch_lambdas_k_, epoch_lambdas_v_;  // Dynamic only

    std::vector<float> residual_k_, residual_v_;  // up to W rows of width_
    std::size_t residual_rows_ = 0;

    std::vector<float> memo_k_, memo_v_;
    bool memo_valid_ = false;

    CacheCounters counters_;
};

class KvCache {
public:
    explicit KvCache(const CacheConfig& config,
                     const std::vector<ChannelScale>* lambda_k_per_layer = nullptr,
                     const std::vector<ChannelScale>* lambda_v_per_layer = nullptr);
    KvCacheLayer& layer(int i) { return layers_[i]; }
    const KvCacheLayer& layer(int i) const { return layers_[i]; }
    int n_layers() const { return static_cast<int>(layers_.size()); }
    const CacheConfig& config() const { return config_; }

private:
    CacheConfig config_;
    std::vector<KvCacheLayer> layers_;
};

MemoryReport memory_report(const KvCacheLayer& layer);
MemoryReport memory_report(const KvCache& cache);

// --- analytic decode simulation -------------------------------------------

struct ModelConfig {
    std::string name = "model";
    int n_layers = 1;
    int n_kv_heads = 1;
    int d = 64;
    int full_attn_every = 1;        // every k-th layer is full attention (1 = all)
    int sliding_window = 0;         // tokens visible to sliding layers (0 = unlimited)
    std::uint64_t weight_bytes = 0;  // streamed once per decode step on both paths
};

struct DecodeSimConfig {
    ModelConfig model;
    QuantScheme scheme;  // applied on full-attention layers; scheme.d == model.d
    int window = 16;
    bool lambda_per_channel = false;  // price a d-float32 lambda per layer side
    bool memo_enabled = true;
    std::uint64_t prefix_len = 0;
    std::uint64_t n_new = 0;
};

struct StepTraceEntry {
    std::uint64_t step = 0;
    int layer = 0;
    std::string op;  // "update" | "flush" | "read" | "rebuild"
    std::uint64_t bytes = 0;
    double ns = 0.0;
};

struct DecodeSimResult {
    std::vector<StepTraceEntry> trace;
    double ns_total_int4 = 0.0;
    double ns_total_fp16 = 0.0;
    double delta_pct = 0.0;
    std::uint64_t flushes_per_full_layer = 0;   // during the simulated steps
    std::uint64_t rebuilds_per_full_layer = 0;
    std::uint64_t overhead_vecs_total = 0;      // vectors the fused kernel touched
    std::uint64_t bytes_int4_total = 0;
    std::uint64_t bytes_fp16_total = 0;
};

// Replays the update/read cycle over all layers for n_new steps with exact
// counter arithmetic from the cache contract, priced by the cost model.
// Sliding-attention layers are fp16 pass-through on both paths.
DecodeSimResult simulate_decode(const DecodeSimConfig& config, const CostModel& model);

bool layer_is_full_attention(const ModelConfig& model, int layer);

}  // namespace rkvq

// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#include "rkvq/kvcache.hpp"

#include <cmath>
#include <cstring>

#include "rkvq/calibrate.hpp"

namespace rkvq {

namespace {

void validate_cache_config(const CacheConfig& config) {
    if (config.window < 1) throw_error(ErrorKind::Config, "cache window must be >= 1");
    if (config.n_kv_heads < 1 || config.n_layers < 1)
        throw_error(ErrorKind::Config, "cache needs at least one layer and one head");
    validate_scheme(config.scheme);
    if (config.scheme.d != config.d)
        throw_error(ErrorKind::Config, "scheme.d must equal cache d");
    if (config.scheme.granularity == Granularity::PerTensor)
        throw_error(ErrorKind::Config,
                    "per-tensor scales cannot grow flush-by-flush; use a per-vector granularity");
    const bool wants_lambda = granularity_uses_lambda(config.scheme.granularity);
    const bool has_source = config.lambda_source != LambdaSource::None;
    if (wants_lambda != has_source)
        throw_error(ErrorKind::Config,
                    "lambda source must be set exactly when the scheme is per-channel");
}

}  // namespace

std::vector<float> KvView::k_matrix() const {
    std::vector<float> out(n_tokens() * row_width);
    if (prefix_tokens > 0)
        std::memcpy(out.data(), prefix_k, prefix_tokens * row_width * sizeof(float));
    if (residual_tokens > 0)
        std::memcpy(out.data() + prefix_tokens * row_width, residual_k,
                    residual_tokens * row_width * sizeof(float));
    return out;
}

std::vector<float> KvView::v_matrix() const {
    std::vector<float> out(n_tokens() * row_width);
    if (prefix_tokens > 0)
        std::memcpy(out.data(), prefix_v, prefix_tokens * row_width * sizeof(float));
    if (residual_tokens > 0)
        std::memcpy(out.data() + prefix_tokens * row_width, residual_v,
                    residual_tokens * row_width * sizeof(float));
    return out;
}

KvCacheLayer::KvCacheLayer(const CacheConfig& config, std::optional<ChannelScale> lambda_k,
                           std::optional<ChannelScale> lambda_v)
    : config_(config),
      spec_(make_spec(config.transform, config.d, config.seed)),
      heads_(config.n_kv_heads),
      width_(static_cast<std::size_t>(config.n_kv_heads) * config.d),
      lambda_k_(std::move(lambda_k)),
      lambda_v_(std::move(lambda_v)) {
    validate_cache_config(config_);
    if (config_.lambda_source == LambdaSource::Calibrated &&
        (!lambda_k_.has_value() || !lambda_v_.has_value()))
        throw_error(ErrorKind::Config, "calibrated lambda source requires lambda_k and lambda_v");
    k_block_.scheme = config_.scheme;
    v_block_.scheme = config_.scheme;
    residual_k_.reserve(static_cast<std::size_t>(config_.window) * width_);
    residual_v_.reserve(static_cast<std::size_t>(config_.window) * width_);
}

void KvCacheLayer::update(std::span<const float> k_row, std::span<const float> v_row) {
    if (k_row.size() != width_ || v_row.size() != width_)
        throw_error(ErrorKind::Shape, "update: rows must hold n_kv_heads * d values");
    residual_k_.insert(residual_k_.end(), k_row.begin(), k_row.end());
    residual_v_.insert(residual_v_.end(), v_row.begin(), v_row.end());
    ++residual_rows_;
    ++counters_.updates;
    if (residual_rows_ == static_cast<std::size_t>(config_.window)) flush();
}

void KvCacheLayer::flush() {
    const std::size_t w = residual_rows_;
    const std::size_t n_new_vecs = w * static_cast<std::size_t>(heads_);

    for (int side = 0; side < 2; ++side) {
        const bool key_side = side == 0;
        const std::vector<float>& raw = key_side ? residual_k_ : residual_v_;
        QuantizedBlock& block = key_side ? k_block_ : v_block_;

        // The residual rows are head-concatenated tokens; each head vector is
        // transformed and quantized separately.
        std::vector<float> transformed(n_new_vecs * static_cast<std::size_t>(config_.d));
        transform_forward_batch<float>(spec_, raw.data(), n_new_vecs, transformed.data());

        ChannelScale dynamic_lambda;
        const ChannelScale* lam = nullptr;
        if (config_.lambda_source == LambdaSource::Calibrated) {
            lam = key_side ? &lambda_k_.value() : &lambda_v_.value();
        } else if (config_.lambda_source == LambdaSource::Dynamic) {
            dynamic_lambda = lambda_from_channel_max(transformed.data(), n_new_vecs,
                                                     static_cast<std::size_t>(config_.d));
            lam = &dynamic_lambda;
            (key_side ? epoch_lambdas_k_ : epoch_lambdas_v_).push_back(dynamic_lambda.lambda);
        }

        QuantizedBlock window_block =
            quantize(config_.scheme, transformed.data(), n_new_vecs, lam);
        block.codes.insert(block.codes.end(), window_block.codes.begin(),
                           window_block.codes.end());
        block.scales.insert(block.scales.end(), window_block.scales.begin(),
                            window_block.scales.end());
        block.n_vec += window_block.n_vec;
        if (config_.lambda_source == LambdaSource::Calibrated && block.lambda.empty())
            block.lambda = window_block.lambda;
    }

    prefix_rows_ += n_new_vecs;
    residual_k_.clear();
    residual_v_.clear();
    residual_rows_ = 0;
    ++counters_.flushes;
    memo_valid_ = false;
}

void KvCacheLayer::dequant_into(bool key_side, std::vector<float>& out) const {
    const QuantizedBlock& block = key_side ? k_block_ : v_block_;
    const std::size_t d = static_cast<std::size_t>(config_.d);
    out.resize(prefix_rows_ * d);
    if (prefix_rows_ == 0) return;

    std::vector<float> transformed(prefix_rows_ * d);
    if (config_.lambda_source == LambdaSource::Dynamic) {
        // Each flush epoch carries its own lambda; dequantize epoch by epoch.
        const auto& epochs = key_side ? epoch_lambdas_k_ : epoch_lambdas_v_;
        const std::size_t vecs_per_epoch = block.n_vec / epochs.size();
        const std::size_t cb = block.codes_bytes_per_vec();
        const std::size_t sc = block.scales_per_vec();
        for (std::size_t e = 0; e < epochs.size(); ++e) {
            QuantizedBlock sub;
            sub.scheme = block.scheme;
            sub.n_vec = vecs_per_epoch;
            sub.codes.assign(block.codes.begin() + e * vecs_per_epoch * cb,
                             block.codes.begin() + (e + 1) * vecs_per_epoch * cb);
            sub.scales.assign(block.scales.begin() + e * vecs_per_epoch * sc,
                              block.scales.begin() + (e + 1) * vecs_per_epoch * sc);
            sub.lambda = epochs[e];
            dequantize(sub, transformed.data() + e * vecs_per_epoch * d);
        }
    } else {
        dequantize(block, transformed.data());
    }
    transform_inverse_batch<float>(spec_, transformed.data(), prefix_rows_, out.data());
}

void KvCacheLayer::rebuild_memo() {
    dequant_into(true, memo_k_);
    dequant_into(false, memo_v_);
    memo_valid_ = true;
    ++counters_.dequant_rebuilds;
}

KvView KvCacheLayer::read() {
    if (!memo_valid_ && prefix_rows_ > 0) rebuild_memo();
    KvView view;
    view.row_width = width_;
    view.prefix_tokens = prefix_tokens();
    if (view.prefix_tokens > 0) {
        view.prefix_k = memo_k_.data();
        view.prefix_v = memo_v_.data();
    }
    view.residual_tokens = residual_rows_;
    if (residual_rows_ > 0) {
        view.residual_k = residual_k_.data();
        view.residual_v = residual_v_.data();
    }
    return view;
}

std::vector<float> KvCacheLayer::dequant_prefix_fresh(bool key_side) const {
    std::vector<float> out;
    dequant_into(key_side, out);
    return out;
}

std::span<const float> KvCacheLayer::residual_raw(bool key_side) const {
    const std::vector<float>& r = key_side ? residual_k_ : residual_v_;
    return {r.data(), r.size()};
}

void KvCacheLayer::restore(QuantizedBlock k_block, QuantizedBlock v_block,
                           std::vector<float> res_k, std::vector<float> res_v,
                           std::vector<std::vector<float>> eplam_k,
                           std::vector<std::vector<float>> eplam_v) {
    if (k_block.n_vec != v_block.n_vec || k_block.n_vec % heads_ != 0)
        throw_error(ErrorKind::Format, "restore: inconsistent block sizes");
    if (res_k.size() != res_v.size() || res_k.size() % width_ != 0)
        throw_error(ErrorKind::Format, "restore: inconsistent residual sizes");
    k_block_ = std::move(k_block);
    v_block_ = std::move(v_block);
    prefix_rows_ = k_block_.n_vec;
    residual_k_ = std::move(res_k);
    residual_v_ = std::move(res_v);
    residual_rows_ = residual_k_.size() / width_;
    epoch_lambdas_k_ = std::move(eplam_k);
    epoch_lambdas_v_ = std::move(eplam_v);
    memo_valid_ = false;
    counters_ = CacheCounters{};
}

std::uint64_t KvCacheLayer::bytes_persistent() const {
    const bool lam_fixed = config_.lambda_source == LambdaSource::Calibrated;
    std::uint64_t bytes = 0;
    if (prefix_rows_ > 0) {
        bytes += 2 * block_payload_bytes(config_.scheme, prefix_rows_, lam_fixed);
    } else if (lam_fixed) {
        bytes += 2 * 4ULL * config_.d;  // lambda is resident even before the first flush
    }
    if (config_.lambda_source == LambdaSource::Dynamic)
        bytes += 4ULL * config_.d * (epoch_lambdas_k_.size() + epoch_lambdas_v_.size());
    return bytes;
}

std::uint64_t KvCacheLayer::bytes_residual_capacity() const {
    // The ring buffer is preallocated at W tokens; priced at 2 bytes/value.
    return 2ULL * static_cast<std::uint64_t>(config_.window) * width_ * 2;
}

std::uint64_t KvCacheLayer::bytes_memo() const {
    if (!memo_valid_) return 0;
    return 2ULL * (memo_k_.size() + memo_v_.size());
}

KvCache::KvCache(const CacheConfig& config, const std::vector<ChannelScale>* lambda_k_per_layer,
                 const std::vector<ChannelScale>* lambda_v_per_layer)
    : config_(config) {
    validate_cache_config(config);
    if (config.lambda_source == LambdaSource::Calibrated) {
        if (lambda_k_per_layer == nullptr || lambda_v_per_layer == nullptr ||
            static_cast<int>(lambda_k_per_layer->size()) != config.n_layers ||
            static_cast<int>(lambda_v_per_layer->size()) != config.n_layers)
            throw_error(ErrorKind::Config, "calibrated cache needs one lambda pair per layer");
    }
    layers_.reserve(config.n_layers);
    for (int i = 0; i < config.n_layers; ++i) {
        std::optional<ChannelScale> lk, lv;
        if (config.lambda_source == LambdaSource::Calibrated) {
            lk = (*lambda_k_per_layer)[i];
            lv = (*lambda_v_per_layer)[i];
        }
        layers_.emplace_back(config, std::move(lk), std::move(lv));
    }
}

MemoryReport memory_report(const KvCacheLayer& layer) {
    MemoryReport rep;
    const std::uint64_t tokens =
        layer.prefix_tokens() + layer.residual_tokens();
    const std::uint64_t width =
        static_cast<std::uint64_t>(layer.config().n_kv_heads) * layer.config().d;
    rep.bytes_fp16_equivalent = 2ULL * tokens * width * 2;
    rep.bytes_actual = layer.bytes_persistent() + layer.bytes_residual_capacity();
    rep.bytes_transient_memo = layer.bytes_memo();
    if (tokens == 0) {
        rep.empty = true;
        rep.ratio = 1.0;
    } else {
        rep.ratio = static_cast<double>(rep.bytes_fp16_equivalent) /
                    static_cast<double>(rep.bytes_actual);
    }
    return rep;
}

MemoryReport memory_report(const KvCache& cache) {
    MemoryReport rep;
    bool any_tokens = false;
    for (int i = 0; i < cache.n_layers(); ++i) {
        MemoryReport lr = memory_report(cache.layer(i));
        rep.bytes_fp16_equivalent += lr.bytes_fp16_equivalent;
        rep.bytes_actual += lr.bytes_actual;
        rep.bytes_transient_memo += lr.bytes_transient_memo;
        if (!lr.empty) any_tokens = true;
    }
    if (!any_tokens) {
        rep.empty = true;
        rep.ratio = 1.0;
    } else {
        rep.ratio = static_cast<double>(rep.bytes_fp16_equivalent) /
                    static_cast<double>(rep.bytes_actual);
    }
    return rep;
}

bool layer_is_full_attention(const ModelConfig& model, int layer) {
    if (model.full_attn_every <= 1) return true;
    return (layer + 1) % model.full_attn_every == 0;
}

DecodeSimResult simulate_decode(const DecodeSimConfig& config, const CostModel& model) {
    model.validate();
    validate_scheme(config.scheme);
    if (config.scheme.d != config.model.d)
        throw_error(ErrorKind::Config, "simulate_decode: scheme.d != model.d");
    if (config.window < 1) throw_error(ErrorKind::Config, "simulate_decode: window must be >= 1");

    const ModelConfig& m = config.model;
    const std::uint64_t heads = static_cast<std::uint64_t>(m.n_kv_heads);
    const std::uint64_t d = static_cast<std::uint64_t>(m.d);
    const std::uint64_t fp16_vec_bytes = 2 * d;
    const double ns_per_byte = 1.0 / model.bandwidth_gbps;
    const double overhead = model.overhead_for(m.d);
    const std::uint64_t w = static_cast<std::uint64_t>(config.window);

    // Per-layer replay state (full-attention layers only).
    struct LayerState {
        std::uint64_t tokens_q = 0;
        std::uint64_t residual_fill = 0;
        bool memo_valid = false;
    };
    std::vector<LayerState> state(m.n_layers);
    for (auto& st : state) {
        st.tokens_q = (config.prefix_len / w) * w;
        st.residual_fill = config.prefix_len % w;
    }

    DecodeSimResult res;
    auto compressed_bytes = [&](std::uint64_t tokens) {
        if (tokens == 0) return std::uint64_t{0};
        return 2 * block_payload_bytes(config.scheme, tokens * heads,
                                       config.lambda_per_channel);
    };

    for (std::uint64_t step = 1; step <= config.n_new; ++step) {
        double ns_fp16_step = static_cast<double>(m.weight_bytes) * ns_per_byte;
        double ns_int4_step = static_cast<double>(m.weight_bytes) * ns_per_byte;
        std::uint64_t bytes_fp16_step = m.weight_bytes;
        std::uint64_t bytes_int4_step = m.weight_bytes;

        for (int layer = 0; layer < m.n_layers; ++layer) {
            const std::uint64_t tokens_total = config.prefix_len + step;
            const bool full = layer_is_full_attention(m, layer);
            std::uint64_t visible = tokens_total;
            if (!full && m.sliding_window > 0)
                visible = std::min<std::uint64_t>(visible,
                                                  static_cast<std::uint64_t>(m.sliding_window));
            const std::uint64_t fp16_bytes = 2 * visible * heads * fp16_vec_bytes;  // K and V
            ns_fp16_step += static_cast<double>(fp16_bytes) * ns_per_byte;
            bytes_fp16_step += fp16_bytes;

            if (!full) {
                // Sliding layers are fp16 pass-through on both paths.
                ns_int4_step += static_cast<double>(fp16_bytes) * ns_per_byte;
                bytes_int4_step += fp16_bytes;
                continue;
            }

            LayerState& st = state[layer];

            // update(): append the new token to the residual (raw fp32 write).
            std::uint64_t update_bytes = 2 * heads * d * 4;
            double update_ns = static_cast<double>(update_bytes) * ns_per_byte;
            res.trace.push_back({step, layer, "update", update_bytes, update_ns});
            ++st.residual_fill;
            std::uint64_t layer_bytes = update_bytes;
            double layer_ns = update_ns;
            std::uint64_t layer_vecs = 0;

            if (st.residual_fill == w) {
                // Flush: transform+quantize the window, clear the residual.
                std::uint64_t vecs = 2 * w * heads;
                std::uint64_t fbytes = 2 * w * heads * d * 4 +
                                       (compressed_bytes(st.tokens_q + w) -
                                        compressed_bytes(st.tokens_q));
                double fns = static_cast<double>(fbytes) * ns_per_byte +
                             static_cast<double>(vecs) * overhead;
                res.trace.push_back({step, layer, "flush", fbytes, fns});
                st.tokens_q += w;
                st.residual_fill = 0;
                st.memo_valid = false;
                layer_bytes += fbytes;
                layer_ns += fns;
                layer_vecs += vecs;
                if (layer == 0) ++res.flushes_per_full_layer;
            }

            // read(): stream the compressed prefix plus the fp16 residual;
            // dequant work happens only when the memo is cold (or disabled).
            std::uint64_t dequant_vecs = 0;
            if (st.tokens_q > 0) {
                if (!config.memo_enabled) {
                    dequant_vecs = 2 * st.tokens_q * heads;
                } else if (!st.memo_valid) {
                    dequant_vecs = 2 * st.tokens_q * heads;
                    st.memo_valid = true;
                    if (layer == 0) ++res.rebuilds_per_full_layer;
                    res.trace.push_back({step, layer, "rebuild", 0,
                                         static_cast<double>(dequant_vecs) * overhead});
                }
            }
            std::uint64_t read_bytes =
                compressed_bytes(st.tokens_q) + 2 * st.residual_fill * heads * fp16_vec_bytes;
            double read_ns = static_cast<double>(read_bytes) * ns_per_byte +
                             static_cast<double>(dequant_vecs) * overhead + model.dispatch_ns;
            res.trace.push_back({step, layer, "read", read_bytes, read_ns});
            layer_bytes += read_bytes;
            layer_ns += read_ns;
            layer_vecs += dequant_vecs;

            ns_int4_step += layer_ns;
            bytes_int4_step += layer_bytes;
            res.overhead_vecs_total += layer_vecs;
        }
        res.ns_total_fp16 += ns_fp16_step;
        res.ns_total_int4 += ns_int4_step;
        res.bytes_fp16_total += bytes_fp16_step;
        res.bytes_int4_total += bytes_int4_step;
    }
    res.delta_pct = res.ns_total_fp16 > 0.0
                        ? 100.0 * (res.ns_total_int4 - res.ns_total_fp16) / res.ns_total_fp16
                        : 0.0;
    return res;
}

}  // namespace rkvq

// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#include "rkvq/serialize.hpp"

#include <cstring>
#include <fstream>

#include "rkvq/calibrate.hpp"

namespace rkvq {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw_error(ErrorKind::Format, "truncated stream");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t lo = get_u32(in);
    std::uint64_t hi = get_u32(in);
    return lo | (hi << 32);
}

float get_f32(std::istream& in) {
    std::uint32_t v = get_u32(in);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

void put_magic(std::ostream& out, const char* magic) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char* magic) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0)
        throw_error(ErrorKind::Format, std::string("bad magic; expected ") + magic);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw_error(ErrorKind::Io, "cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_error(ErrorKind::Io, "cannot open for reading: " + path);
    return in;
}

void put_f32_array(std::ostream& out, const float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) put_f32(out, data[i]);
}

void get_f32_array(std::istream& in, float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) data[i] = get_f32(in);
}

constexpr std::uint32_t kFlagLambda = 1u;
constexpr std::uint32_t kFlagPerTensor = 2u;

}  // namespace

void save_block(std::ostream& out, const QuantizedBlock& block) {
    const QuantScheme& s = block.scheme;
    put_magic(out, "RKVQ");
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(s.d));
    put_u32(out, static_cast<std::uint32_t>(s.bits));
    put_u32(out, granularity_uses_group(s.granularity) ? static_cast<std::uint32_t>(s.group) : 0);
    put_u64(out, block.n_vec);
    std::uint32_t flags = 0;
    if (!block.lambda.empty()) flags |= kFlagLambda;
    if (s.granularity == Granularity::PerTensor) flags |= kFlagPerTensor;
    put_u32(out, flags);
    if (!block.lambda.empty()) put_f32_array(out, block.lambda.data(), block.lambda.size());
    put_f32_array(out, block.scales.data(), block.scales.size());
    out.write(reinterpret_cast<const char*>(block.codes.data()),
              static_cast<std::streamsize>(block.codes.size()));
    if (!out) throw_error(ErrorKind::Io, "write failed");
}

QuantizedBlock load_block(std::istream& in) {
    expect_magic(in, "RKVQ");
    std::uint32_t version = get_u32(in);
    if (version != 1) throw_error(ErrorKind::Format, "unsupported block version");
    QuantizedBlock block;
    QuantScheme& s = block.scheme;
    s.d = static_cast<int>(get_u32(in));
    s.bits = static_cast<int>(get_u32(in));
    s.group = static_cast<int>(get_u32(in));
    block.n_vec = get_u64(in);
    std::uint32_t flags = get_u32(in);
    const bool has_lambda = flags & kFlagLambda;
    if (flags & kFlagPerTensor) {
        s.granularity = Granularity::PerTensor;
    } else if (s.group > 0) {
        s.granularity = has_lambda ? Granularity::PerChannelPlusGroup : Granularity::PerGroup;
    } else {
        s.granularity = has_lambda ? Granularity::PerChannel : Granularity::PerToken;
    }
    validate_scheme(s);
    if (has_lambda) {
        block.lambda.resize(s.d);
        get_f32_array(in, block.lambda.data(), block.lambda.size());
    }
    std::size_t n_scales = s.granularity == Granularity::PerTensor
                               ? 1
                               : block.n_vec * block.scales_per_vec();
    block.scales.resize(n_scales);
    get_f32_array(in, block.scales.data(), n_scales);
    block.codes.resize(block.n_vec * block.codes_bytes_per_vec());
    in.read(reinterpret_cast<char*>(block.codes.data()),
            static_cast<std::streamsize>(block.codes.size()));
    if (!in) throw_error(ErrorKind::Format, "truncated code payload");
    return block;
}

void save_block(const QuantizedBlock& block, const std::string& path) {
    auto out = open_out(path);
    save_block(out, block);
}

QuantizedBlock load_block(const std::string& path) {
    auto in = open_in(path);
    return load_block(in);
}

void save_activations(const ActivationBatch& batch, const std::string& path) {
    auto out = open_out(path);
    put_magic(out, "RKVA");
    put_u32(out, static_cast<std::uint32_t>(batch.n));
    put_u32(out, static_cast<std::uint32_t>(batch.d));
    put_f32_array(out, batch.data.data(), batch.data.size());
    if (!out) throw_error(ErrorKind::Io, "write failed: " + path);
}

ActivationBatch load_activations(const std::string& path) {
    auto in = open_in(path);
    expect_magic(in, "RKVA");
    ActivationBatch batch;
    batch.n = get_u32(in);
    batch.d = get_u32(in);
    batch.source = path;
    batch.data.resize(batch.n * batch.d);
    get_f32_array(in, batch.data.data(), batch.data.size());
    return batch;
}

void save_rotation_params(const RotationParams& params, const std::string& path) {
    auto out = open_out(path);
    put_magic(out, "RKVC");
    put_u32(out, static_cast<std::uint32_t>(params.kind));
    put_u32(out, static_cast<std::uint32_t>(params.d));
    put_u32(out, static_cast<std::uint32_t>(params.k));
    for (double l : params.lambda) put_f32(out, static_cast<float>(l));
    if (params.kind == RotationKind::Cayley || params.kind == RotationKind::NoSrftCayley) {
        for (double g : params.generator) put_f32(out, static_cast<float>(g));
    } else if (params.kind == RotationKind::Householder) {
        for (double r : params.reflectors) put_f32(out, static_cast<float>(r));
    }
    if (!out) throw_error(ErrorKind::Io, "write failed: " + path);
}

RotationParams load_rotation_params(const std::string& path) {
    auto in = open_in(path);
    expect_magic(in, "RKVC");
    RotationParams params;
    std::uint32_t kind = get_u32(in);
    if (kind > 3) throw_error(ErrorKind::Format, "bad rotation kind");
    params.kind = static_cast<RotationKind>(kind);
    params.d = static_cast<int>(get_u32(in));
    params.k = static_cast<int>(get_u32(in));
    if (params.d <= 0 || params.d > 4096) throw_error(ErrorKind::Format, "bad dimension");
    params.lambda.resize(params.d);
    for (double& l : params.lambda) l = static_cast<double>(get_f32(in));
    if (params.kind == RotationKind::Cayley || params.kind == RotationKind::NoSrftCayley) {
        params.generator.resize(static_cast<std::size_t>(params.d) * params.d);
        for (double& g : params.generator) g = static_cast<double>(get_f32(in));
    } else if (params.kind == RotationKind::Householder) {
        params.reflectors.resize(static_cast<std::size_t>(params.k) * params.d);
        for (double& r : params.reflectors) r = static_cast<double>(get_f32(in));
    }
    // Re-materialize the cached rotation from the stored parameters.
    if (params.kind == RotationKind::ScaleOnly) {
        params.cached_r.assign(static_cast<std::size_t>(params.d) * params.d, 0.0f);
        for (int i = 0; i < params.d; ++i)
            params.cached_r[static_cast<std::size_t>(i) * params.d + i] = 1.0f;
    } else {
        std::vector<double> r =
            params.kind == RotationKind::Householder
                ? householder_compose(params.reflectors, params.k, params.d)
                : expm_skew(params.generator, params.d);
        params.cached_r.resize(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) params.cached_r[i] = static_cast<float>(r[i]);
    }
    return params;
}

void save_cache(const KvCache& cache, const std::string& path) {
    auto out = open_out(path);
    const CacheConfig& c = cache.config();
    put_magic(out, "RKVS");
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(c.d));
    put_u32(out, static_cast<std::uint32_t>(c.n_layers));
    put_u32(out, static_cast<std::uint32_t>(c.n_kv_heads));
    put_u32(out, static_cast<std::uint32_t>(c.scheme.bits));
    put_u32(out, static_cast<std::uint32_t>(c.scheme.granularity));
    put_u32(out, static_cast<std::uint32_t>(c.scheme.group));
    put_u32(out, static_cast<std::uint32_t>(c.window));
    put_u32(out, static_cast<std::uint32_t>(c.lambda_source));
    put_u32(out, static_cast<std::uint32_t>(c.transform));
    put_u64(out, c.seed);
    for (int i = 0; i < cache.n_layers(); ++i) {
        const KvCacheLayer& layer = cache.layer(i);
        save_block(out, layer.prefix_block(true));
        save_block(out, layer.prefix_block(false));
        for (int side = 0; side < 2; ++side) {
            const auto& lam = layer.calibrated_lambda(side == 0);
            put_u32(out, lam.has_value() ? static_cast<std::uint32_t>(lam->lambda.size()) : 0);
            if (lam.has_value()) put_f32_array(out, lam->lambda.data(), lam->lambda.size());
        }
        for (int side = 0; side < 2; ++side) {
            const auto& epochs = layer.epoch_lambdas(side == 0);
            put_u32(out, static_cast<std::uint32_t>(epochs.size()));
            for (const auto& lam : epochs) put_f32_array(out, lam.data(), lam.size());
        }
        auto res_k = layer.residual_raw(true);
        auto res_v = layer.residual_raw(false);
        put_u64(out, res_k.size());
        put_f32_array(out, res_k.data(), res_k.size());
        put_f32_array(out, res_v.data(), res_v.size());
    }
    if (!out) throw_error(ErrorKind::Io, "write failed: " + path);
}

KvCache load_cache(const std::string& path) {
    auto in = open_in(path);
    expect_magic(in, "RKVS");
    if (get_u32(in) != 1) throw_error(ErrorKind::Format, "unsupported snapshot version");
    CacheConfig c;
    c.d = static_cast<int>(get_u32(in));
    c.n_layers = static_cast<int>(get_u32(in));
    c.n_kv_heads = static_cast<int>(get_u32(in));
    c.scheme.bits = static_cast<int>(get_u32(in));
    c.scheme.granularity = static_cast<Granularity>(get_u32(in));
    c.scheme.group = static_cast<int>(get_u32(in));
    c.scheme.d = c.d;
    c.window = static_cast<int>(get_u32(in));
    c.lambda_source = static_cast<LambdaSource>(get_u32(in));
    c.transform = static_cast<TransformKind>(get_u32(in));
    c.seed = get_u64(in);

    std::vector<ChannelScale> lk(c.n_layers), lv(c.n_layers);
    std::vector<QuantizedBlock> kb(c.n_layers), vb(c.n_layers);
    std::vector<std::vector<float>> res_k(c.n_layers), res_v(c.n_layers);
    std::vector<std::vector<std::vector<float>>> ek(c.n_layers), ev(c.n_layers);
    for (int i = 0; i < c.n_layers; ++i) {
        kb[i] = load_block(in);
        vb[i] = load_block(in);
        // The snapshot config is authoritative for the scheme; an empty
        // block's flags cannot distinguish the per-channel granularities.
        kb[i].scheme = c.scheme;
        vb[i].scheme = c.scheme;
        for (int side = 0; side < 2; ++side) {
            std::uint32_t n_lam = get_u32(in);
            auto& dst = side == 0 ? lk[i] : lv[i];
            dst.lambda.resize(n_lam);
            get_f32_array(in, dst.lambda.data(), n_lam);
        }
        for (int side = 0; side < 2; ++side) {
            std::uint32_t n_epochs = get_u32(in);
            auto& dst = side == 0 ? ek[i] : ev[i];
            dst.resize(n_epochs);
            for (auto& lam : dst) {
                lam.resize(c.d);
                get_f32_array(in, lam.data(), lam.size());
            }
        }
        std::uint64_t n_res = get_u64(in);
        res_k[i].resize(n_res);
        res_v[i].resize(n_res);
        get_f32_array(in, res_k[i].data(), n_res);
        get_f32_array(in, res_v[i].data(), n_res);
    }
    KvCache cache(c, c.lambda_source == LambdaSource::Calibrated ? &lk : nullptr,
                  c.lambda_source == LambdaSource::Calibrated ? &lv : nullptr);
    for (int i = 0; i < c.n_layers; ++i) {
        cache.layer(i).restore(std::move(kb[i]), std::move(vb[i]), std::move(res_k[i]),
                               std::move(res_v[i]), std::move(ek[i]), std::move(ev[i]));
    }
    return cache;
}

}  // namespace rkvq

// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "rkvq/serialize.hpp"
#include "test_util.hpp"

using namespace rkvq;

namespace {

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("packed block round-trips across granularities and bit widths") {
    struct Case {
        QuantScheme scheme;
        bool lambda;
    };
    std::vector<Case> cases = {
        {{4, Granularity::PerToken, 0, 64}, false},
        {{8, Granularity::PerTensor, 0, 32}, false},
        {{3, Granularity::PerGroup, 16, 64}, false},
        {{4, Granularity::PerChannel, 0, 32}, true},
        {{6, Granularity::PerChannelPlusGroup, 32, 128}, true},
    };
    for (const auto& c : cases) {
        std::vector<float> x = test::random_vector(c.scheme.d * 10, 99 + c.scheme.bits);
        ChannelScale lambda;
        if (c.lambda) {
            lambda.lambda.resize(c.scheme.d);
            for (int i = 0; i < c.scheme.d; ++i) lambda.lambda[i] = 0.5f + 0.01f * i;
        }
        QuantizedBlock block = quantize(c.scheme, x.data(), 10, c.lambda ? &lambda : nullptr);
        const std::string path = "block_rt.rkvq";
        save_block(block, path);
        QuantizedBlock loaded = load_block(path);
        CHECK(loaded.scheme.bits == block.scheme.bits);
        CHECK(loaded.scheme.granularity == block.scheme.granularity);
        CHECK(loaded.scheme.group == block.scheme.group);
        CHECK(loaded.n_vec == block.n_vec);
        CHECK(loaded.codes == block.codes);
        CHECK(loaded.scales == block.scales);
        CHECK(loaded.lambda == block.lambda);
        CHECK(dequantize(loaded) == dequantize(block));
        std::remove(path.c_str());
    }
}

TEST_CASE("block header is little-endian with the documented layout") {
    QuantScheme scheme{4, Granularity::PerToken, 0, 8};
    std::vector<float> x = test::random_vector(8, 3);
    QuantizedBlock block = quantize(scheme, x.data(), 1);
    const std::string path = "block_header.rkvq";
    save_block(block, path);
    std::vector<char> bytes = slurp(path);
    REQUIRE(bytes.size() >= 32);
    CHECK(std::memcmp(bytes.data(), "RKVQ", 4) == 0);
    auto u32_at = [&](std::size_t off) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off])) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 8) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 16) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3])) << 24);
    };
    CHECK(u32_at(4) == 1);   // version
    CHECK(u32_at(8) == 8);   // d
    CHECK(u32_at(12) == 4);  // bits
    CHECK(u32_at(16) == 0);  // group: per-token
    CHECK(u32_at(20) == 1);  // n_vec low word
    CHECK(u32_at(24) == 0);  // n_vec high word
    CHECK(u32_at(28) == 0);  // flags: no lambda, not per-tensor
    // 4 bytes of f32 scale + 4 nibble-packed bytes of codes follow.
    CHECK(bytes.size() == 32 + 4 + 4);
    std::remove(path.c_str());
}

TEST_CASE("bad magic and truncation raise format errors") {
    const std::string path = "bad.rkvq";
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE";
    }
    CHECK_THROWS_AS((void)load_block(path), Error);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "RKVQ";  // header cut short
    }
    CHECK_THROWS_AS((void)load_block(path), Error);
    std::remove(path.c_str());
    CHECK_THROWS_AS((void)load_block("does_not_exist.rkvq"), Error);
}

TEST_CASE("activation batches round-trip") {
    ActivationBatch batch = synth_activations(Profile::HeavyTailMixture, 37, 64, 5);
    const std::string path = "acts.rkva";
    save_activations(batch, path);
    ActivationBatch loaded = load_activations(path);
    CHECK(loaded.n == batch.n);
    CHECK(loaded.d == batch.d);
    CHECK(loaded.data == batch.data);
    std::remove(path.c_str());
}

TEST_CASE("cache snapshot: save, load, read back identically") {
    CacheConfig config;
    config.d = 32;
    config.n_layers = 2;
    config.n_kv_heads = 2;
    config.scheme = QuantScheme{4, Granularity::PerChannelPlusGroup, 16, 32};
    config.window = 8;
    config.lambda_source = LambdaSource::Calibrated;
    config.transform = TransformKind::Srft;
    config.seed = 77;
    ChannelScale lambda;
    lambda.lambda.resize(32);
    for (int i = 0; i < 32; ++i) lambda.lambda[i] = 0.5f + 0.02f * i;
    std::vector<ChannelScale> lk = {lambda, lambda}, lv = {lambda, lambda};
    KvCache cache(config, &lk, &lv);

    for (int i = 0; i < 21; ++i) {  // leaves a 5-token residual
        std::vector<float> k(64), v(64);
        for (int c = 0; c < 64; ++c) {
            k[c] = static_cast<float>(keyed_normal(500 + i, c));
            v[c] = static_cast<float>(keyed_normal(900 + i, c));
        }
        cache.layer(0).update(k, v);
        cache.layer(1).update(v, k);
    }

    const std::string path = "cache.rkvs";
    save_cache(cache, path);
    KvCache loaded = load_cache(path);
    CHECK(loaded.n_layers() == 2);
    for (int l = 0; l < 2; ++l) {
        KvView a = cache.layer(l).read();
        KvView b = loaded.layer(l).read();
        CHECK(a.n_tokens() == b.n_tokens());
        CHECK(cache.layer(l).residual_tokens() == loaded.layer(l).residual_tokens());
        std::vector<float> ka = a.k_matrix(), kb = b.k_matrix();
        std::vector<float> va = a.v_matrix(), vb = b.v_matrix();
        CHECK(ka == kb);
        CHECK(va == vb);
    }
    // Future updates keep working on the restored cache (lambda recovered).
    std::vector<float> t(64, 0.25f);
    for (int i = 0; i < 8; ++i) loaded.layer(0).update(t, t);
    CHECK(loaded.layer(0).counters().flushes == 1);
    std::remove(path.c_str());
}

TEST_CASE("dynamic-lambda snapshot keeps per-epoch lambdas") {
    CacheConfig config;
    config.d = 16;
    config.scheme = QuantScheme{4, Granularity::PerChannel, 0, 16};
    config.window = 4;
    config.lambda_source = LambdaSource::Dynamic;
    KvCache cache(config);
    for (int i = 0; i < 13; ++i) {
        std::vector<float> t(16);
        for (int c = 0; c < 16; ++c) t[c] = static_cast<float>(keyed_normal(i, c)) * (1 + c);
        cache.layer(0).update(t, t);
    }
    const std::string path = "cache_dyn.rkvs";
    save_cache(cache, path);
    KvCache loaded = load_cache(path);
    CHECK(loaded.layer(0).epoch_lambdas(true).size() == 3);
    KvView a = cache.layer(0).read();
    KvView b = loaded.layer(0).read();
    CHECK(a.k_matrix() == b.k_matrix());
    std::remove(path.c_str());
}

// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#include "rkvq/transform.hpp"

#include <cmath>
#include <complex>
#include <cstring>

#include "rkvq/rng.hpp"

namespace rkvq {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

// Radix-2 Stockham autosort FFT over complex length m (m a power of two).
// Self-sorting: no bit reversal; the butterfly pass ping-pongs between two
// buffers. Twiddles are precomputed per stage in double precision.
template <typename T>
struct FftPlan {
    int m;
    int stages;
    std::vector<std::complex<T>> tw;   // stage t occupies [tw_off[t], tw_off[t] + 2^t)
    std::vector<int> tw_off;

    explicit FftPlan(int m_) : m(m_), stages(log2_exact(static_cast<std::uint64_t>(m_))) {
        tw_off.resize(stages);
        int total = 0;
        for (int t = 0; t < stages; ++t) {
            tw_off[t] = total;
            total += 1 << t;
        }
        tw.resize(total);
        for (int t = 0; t < stages; ++t) {
            int s = 1 << t;
            for (int q = 0; q < s; ++q) {
                double ang = -kPi * static_cast<double>(q) / static_cast<double>(s);
                tw[tw_off[t] + q] = std::complex<T>(static_cast<T>(std::cos(ang)),
                                                    static_cast<T>(std::sin(ang)));
            }
        }
    }

    // DFT with kernel e^{-2*pi*i*jk/m}, scaled by 1/sqrt(m). `inverse` flips
    // the kernel sign (still 1/sqrt(m), so inverse(run(x)) == x). Result is
    // guaranteed to land back in `x`; `y` is scratch of the same length.
    void run(std::complex<T>* x, std::complex<T>* y, bool inverse) const {
        std::complex<T>* src = x;
        std::complex<T>* dst = y;
        int n = m;
        for (int t = 0; t < stages; ++t) {
            int s = 1 << t;
            int mh = n / 2;
            const std::complex<T>* wt = tw.data() + tw_off[t];
            for (int p = 0; p < mh; ++p) {
                for (int q = 0; q < s; ++q) {
                    std::complex<T> w = inverse ? std::conj(wt[q]) : wt[q];
                    std::complex<T> a = src[q + s * p];
                    std::complex<T> b = src[q + s * (p + mh)] * w;
                    dst[q + s * 2 * p] = a + b;
                    dst[q + s * (2 * p + 1)] = a - b;
                }
            }
            std::swap(src, dst);
            n /= 2;
        }
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(m)));
        if (src != x) {
            for (int i = 0; i < m; ++i) x[i] = src[i] * scale;
        } else {
            for (int i = 0; i < m; ++i) x[i] *= scale;
        }
    }
};

// Scratch-owning worker for one spec; reused across a batch.
template <typename T>
struct SrftWorker {
    const TransformSpec& spec;
    FftPlan<T> plan;
    std::vector<std::complex<T>> z, scratch;
    std::vector<std::complex<T>> half_tw;  // e^{-i*pi*k/m}, k in [0, m)

    explicit SrftWorker(const TransformSpec& s)
        : spec(s), plan(s.d / 2), z(s.d / 2), scratch(s.d / 2), half_tw(s.d / 2) {
        int m = s.d / 2;
        for (int k = 0; k < m; ++k) {
            double ang = -kPi * static_cast<double>(k) / static_cast<double>(m);
            half_tw[k] = std::complex<T>(static_cast<T>(std::cos(ang)),
                                         static_cast<T>(std::sin(ang)));
        }
    }

    void forward(const T* x, T* out) {
        const int d = spec.d;
        const int m = d / 2;
        const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
        for (int k = 0; k < m; ++k) {
            z[k] = std::complex<T>(x[2 * k] * static_cast<T>(spec.signs[2 * k]),
                                   x[2 * k + 1] * static_cast<T>(spec.signs[2 * k + 1]));
        }
        plan.run(z.data(), scratch.data(), /*inverse=*/false);
        // Hermitian split of the half-length complex spectrum into the packed
        // real layout: with the 1/sqrt(m) already applied, the sqrt(2)
        // middle-bin factor cancels and only the edge bins need 1/sqrt(2).
        out[0] = (z[0].real() + z[0].imag()) * inv_sqrt2;
        out[m] = (z[0].real() - z[0].imag()) * inv_sqrt2;
        for (int k = 1; k < m; ++k) {
            std::complex<T> zk = z[k];
            std::complex<T> zmk = std::conj(z[m - k]);
            std::complex<T> even = (zk + zmk) * static_cast<T>(0.5);
            std::complex<T> odd = (zk - zmk) * std::complex<T>(0, static_cast<T>(-0.5));
            std::complex<T> y = even + half_tw[k] * odd;
            out[k] = y.real();
            out[m + k] = y.imag();
        }
    }

    void inverse(const T* y, T* out) {
        const int d = spec.d;
        const int m = d / 2;
        const T sqrt2 = static_cast<T>(1.41421356237309504880);
        auto bin = [&](int k) -> std::complex<T> {
            if (k == 0) return std::complex<T>(y[0] * sqrt2, 0);
            if (k == m) return std::complex<T>(y[m] * sqrt2, 0);
            return std::complex<T>(y[k], y[m + k]);
        };
        for (int k = 0; k < m; ++k) {
            std::complex<T> yk = bin(k);
            std::complex<T> ymk = std::conj(bin(m - k));
            std::complex<T> even = (yk + ymk) * static_cast<T>(0.5);
            std::complex<T> odd = std::conj(half_tw[k]) * (yk - ymk) * static_cast<T>(0.5);
            z[k] = even + std::complex<T>(0, 1) * odd;
        }
        plan.run(z.data(), scratch.data(), /*inverse=*/true);
        for (int k = 0; k < m; ++k) {
            out[2 * k] = z[k].real() * static_cast<T>(spec.signs[2 * k]);
            out[2 * k + 1] = z[k].imag() * static_cast<T>(spec.signs[2 * k + 1]);
        }
    }
};

template <typename T>
void check_span(const TransformSpec& spec, std::span<const T> v, const char* what) {
    if (static_cast<int>(v.size()) != spec.d)
        throw_error(ErrorKind::Shape, std::string(what) + ": expected length " +
                                          std::to_string(spec.d) + ", got " +
                                          std::to_string(v.size()));
}

void check_kind(const TransformSpec& spec, TransformKind want, const char* what) {
    if (spec.kind != want)
        throw_error(ErrorKind::Config, std::string(what) + ": spec has the wrong transform kind");
}

template <typename T>
void srht_apply(const TransformSpec& spec, const T* in, T* out, bool inverse) {
    const int d = spec.d;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    if (!inverse) {
        for (int i = 0; i < d; ++i) out[i] = in[i] * static_cast<T>(spec.signs[i]);
        walsh_hadamard_inplace(out, d);
        for (int i = 0; i < d; ++i) out[i] *= scale;
    } else {
        for (int i = 0; i < d; ++i) out[i] = in[i];
        walsh_hadamard_inplace(out, d);
        for (int i = 0; i < d; ++i) out[i] *= scale * static_cast<T>(spec.signs[i]);
    }
}

}  // namespace

TransformSpec make_spec(TransformKind kind, int d, std::uint64_t seed) {
    if (d < 4 || d > 4096)
        throw_error(ErrorKind::Range, "transform dimension must be in [4, 4096], got " +
                                          std::to_string(d));
    if (!is_pow2(static_cast<std::uint64_t>(d)))
        throw_error(ErrorKind::Dimension,
                    "transform dimension must be a power of two, got " + std::to_string(d));
    TransformSpec spec;
    spec.kind = kind;
    spec.d = d;
    spec.seed = seed;
    spec.signs.resize(d);
    for (int i = 0; i < d; ++i) {
        spec.signs[i] = (kind == TransformKind::Identity)
                            ? std::int8_t{1}
                            : static_cast<std::int8_t>(keyed_sign(seed, static_cast<std::uint64_t>(i)));
    }
    return spec;
}

template <typename T>
void walsh_hadamard_inplace(T* v, int d) {
    for (int h = 1; h < d; h <<= 1) {
        for (int i = 0; i < d; i += h << 1) {
            for (int j = i; j < i + h; ++j) {
                T a = v[j];
                T b = v[j + h];
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
    }
}

template void walsh_hadamard_inplace<float>(float*, int);
template void walsh_hadamard_inplace<double>(double*, int);

template <typename T>
void srft_forward(const TransformSpec& spec, std::span<const T> x, std::span<T> out) {
    check_kind(spec, TransformKind::Srft, "srft_forward");
    check_span(spec, x, "srft_forward input");
    check_span<T>(spec, {out.data(), out.size()}, "srft_forward output");
    SrftWorker<T> w(spec);
    w.forward(x.data(), out.data());
}

template <typename T>
void srft_inverse(const TransformSpec& spec, std::span<const T> y, std::span<T> out) {
    check_kind(spec, TransformKind::Srft, "srft_inverse");
    check_span(spec, y, "srft_inverse input");
    check_span<T>(spec, {out.data(), out.size()}, "srft_inverse output");
    SrftWorker<T> w(spec);
    w.inverse(y.data(), out.data());
}

template <typename T>
void srht_forward(const TransformSpec& spec, std::span<const T> x, std::span<T> out) {
    check_kind(spec, TransformKind::Srht, "srht_forward");
    check_span(spec, x, "srht_forward input");
    check_span<T>(spec, {out.data(), out.size()}, "srht_forward output");
    srht_apply(spec, x.data(), out.data(), /*inverse=*/false);
}

template <typename T>
void srht_inverse(const TransformSpec& spec, std::span<const T> y, std::span<T> out) {
    check_kind(spec, TransformKind::Srht, "srht_inverse");
    check_span(spec, y, "srht_inverse input");
    check_span<T>(spec, {out.data(), out.size()}, "srht_inverse output");
    srht_apply(spec, y.data(), out.data(), /*inverse=*/true);
}

template <typename T>
void transform_forward(const TransformSpec& spec, std::span<const T> x, std::span<T> out) {
    switch (spec.kind) {
        case TransformKind::Srft: srft_forward(spec, x, out); break;
        case TransformKind::Srht: srht_forward(spec, x, out); break;
        case TransformKind::Identity:
            check_span(spec, x, "transform_forward input");
            std::memcpy(out.data(), x.data(), sizeof(T) * x.size());
            break;
    }
}

template <typename T>
void transform_inverse(const TransformSpec& spec, std::span<const T> y, std::span<T> out) {
    switch (spec.kind) {
        case TransformKind::Srft: srft_inverse(spec, y, out); break;
        case TransformKind::Srht: srht_inverse(spec, y, out); break;
        case TransformKind::Identity:
            check_span(spec, y, "transform_inverse input");
            std::memcpy(out.data(), y.data(), sizeof(T) * y.size());
            break;
    }
}

template <typename T>
void transform_forward_batch(const TransformSpec& spec, const T* x, std::size_t n, T* out) {
    const int d = spec.d;
    if (spec.kind == TransformKind::Srft) {
        SrftWorker<T> w(spec);
        for (std::size_t i = 0; i < n; ++i) w.forward(x + i * d, out + i * d);
    } else if (spec.kind == TransformKind::Srht) {
        for (std::size_t i = 0; i < n; ++i) srht_apply(spec, x + i * d, out + i * d, false);
    } else {
        std::memcpy(out, x, sizeof(T) * n * d);
    }
}

template <typename T>
void transform_inverse_batch(const TransformSpec& spec, const T* y, std::size_t n, T* out) {
    const int d = spec.d;
    if (spec.kind == TransformKind::Srft) {
        SrftWorker<T> w(spec);
        for (std::size_t i = 0; i < n; ++i) w.inverse(y + i * d, out + i * d);
    } else if (spec.kind == TransformKind::Srht) {
        for (std::size_t i = 0; i < n; ++i) srht_apply(spec, y + i * d, out + i * d, true);
    } else {
        std::memcpy(out, y, sizeof(T) * n * d);
    }
}

template void srft_forward<float>(const TransformSpec&, std::span<const float>, std::span<float>);
template void srft_forward<double>(const TransformSpec&, std::span<const double>, std::span<double>);
template void srft_inverse<float>(const TransformSpec&, std::span<const float>, std::span<float>);
template void srft_inverse<double>(const TransformSpec&, std::span<const double>, std::span<double>);
template void srht_forward<float>(const TransformSpec&, std::span<const float>, std::span<float>);
template void srht_forward<double>(const TransformSpec&, std::span<const double>, std::span<double>);
template void srht_inverse<float>(const TransformSpec&, std::span<const float>, std::span<float>);
template void srht_inverse<double>(const TransformSpec&, std::span<const double>, std::span<double>);
template void transform_forward<float>(const TransformSpec&, std::span<const float>, std::span<float>);
template void transform_forward<double>(const TransformSpec&, std::span<const double>, std::span<double>);
template void transform_inverse<float>(const TransformSpec&, std::span<const float>, std::span<float>);
template void transform_inverse<double>(const TransformSpec&, std::span<const double>, std::span<double>);
template void transform_forward_batch<float>(const TransformSpec&, const float*, std::size_t, float*);
template void transform_forward_batch<double>(const TransformSpec&, const double*, std::size_t, double*);
template void transform_inverse_batch<float>(const TransformSpec&, const float*, std::size_t, float*);
template void transform_inverse_batch<double>(const TransformSpec&, const double*, std::size_t, double*);

std::vector<float> transform_forward(const TransformSpec& spec, std::span<const float> x) {
    std::vector<float> out(spec.d);
    transform_forward<float>(spec, x, out);
    return out;
}

std::vector<float> transform_inverse(const TransformSpec& spec, std::span<const float> y) {
    std::vector<float> out(spec.d);
    transform_inverse<float>(spec, y, out);
    return out;
}

std::pair<double, double> gaussianization_score(const TransformSpec& spec, const float* x,
                                                std::size_t n) {
    if (n == 0) throw_error(ErrorKind::Range, "gaussianization_score: empty batch");
    const int d = spec.d;
    auto pooled_excess_kurtosis = [&](const float* v) {
        const std::size_t total = n * static_cast<std::size_t>(d);
        double mean = 0.0;
        for (std::size_t i = 0; i < total; ++i) mean += v[i];
        mean /= static_cast<double>(total);
        double m2 = 0.0, m4 = 0.0;
        for (std::size_t i = 0; i < total; ++i) {
            double c = v[i] - mean;
            double c2 = c * c;
            m2 += c2;
            m4 += c2 * c2;
        }
        m2 /= static_cast<double>(total);
        m4 /= static_cast<double>(total);
        if (m2 == 0.0)
            throw_error(ErrorKind::UndefinedMoment,
                        "gaussianization_score: constant batch has no defined kurtosis");
        return m4 / (m2 * m2) - 3.0;
    };
    double before = pooled_excess_kurtosis(x);
    std::vector<float> transformed(n * static_cast<std::size_t>(d));
    transform_forward_batch(spec, x, n, transformed.data());
    double after = pooled_excess_kurtosis(transformed.data());
    return {before, after};
}

}  // namespace rkvq

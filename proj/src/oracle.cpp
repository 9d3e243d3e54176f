// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#include "rkvq/oracle.hpp"

#include <cmath>

#include "rkvq/rng.hpp"

namespace rkvq::oracle {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
}

std::vector<double> matvec(const DenseMatrix& m, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != m.cols)
        throw_error(ErrorKind::Shape, "matvec: length mismatch");
    std::vector<double> y(m.rows, 0.0);
    for (int r = 0; r < m.rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < m.cols; ++c) acc += m.at(r, c) * x[c];
        y[r] = acc;
    }
    return y;
}

DenseMatrix dense_srft_matrix(const TransformSpec& spec) {
    const int d = spec.d;
    if (d > 1024) throw_error(ErrorKind::Range, "dense_srft_matrix: d > 1024");
    const int m = d / 2;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double sqrt2 = std::sqrt(2.0);
    DenseMatrix out(d, d);
    for (int j = 0; j < d; ++j) {
        double s = static_cast<double>(spec.signs[j]);
        // Y_k of s_j * e_j under the unitary DFT: (s_j/sqrt(d)) * e^{-2*pi*i*k*j/d}.
        for (int k = 0; k <= m; ++k) {
            double ang = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(j) /
                         static_cast<double>(d);
            double re = s * inv_sqrt_d * std::cos(ang);
            double im = s * inv_sqrt_d * std::sin(ang);
            if (k == 0) {
                out.at(0, j) = re;
            } else if (k == m) {
                out.at(m, j) = re;
            } else {
                out.at(k, j) = sqrt2 * re;
                out.at(m + k, j) = sqrt2 * im;
            }
        }
    }
    return out;
}

DenseMatrix dense_srht_matrix(const TransformSpec& spec) {
    const int d = spec.d;
    if (d > 1024) throw_error(ErrorKind::Range, "dense_srht_matrix: d > 1024");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    DenseMatrix out(d, d);
    for (int k = 0; k < d; ++k) {
        for (int j = 0; j < d; ++j) {
            int parity = __builtin_popcount(static_cast<unsigned>(k & j)) & 1;
            out.at(k, j) = static_cast<double>(spec.signs[j]) * inv_sqrt_d *
                           (parity ? -1.0 : 1.0);
        }
    }
    return out;
}

QuantizedBlock scalar_quantize_reference(const QuantScheme& scheme, const float* x,
                                         std::uint64_t n_vec, const ChannelScale* lambda) {
    validate_scheme(scheme);
    if (n_vec == 0) throw_error(ErrorKind::Range, "scalar_quantize_reference: empty batch");
    const int d = scheme.d;
    const int qmax = quant_max(scheme.bits);
    const bool use_lambda = granularity_uses_lambda(scheme.granularity);
    if (use_lambda && (lambda == nullptr || static_cast<int>(lambda->lambda.size()) != d))
        throw_error(ErrorKind::Config, "scalar_quantize_reference: lambda missing or wrong length");
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
        for (float& l : block.lambda) {
            if (l < kLambdaFloor) l = kLambdaFloor;
        }
    }

    double tensor_absmax = 0.0;
    if (scheme.granularity == Granularity::PerTensor) {
        for (std::uint64_t i = 0; i < n_vec * static_cast<std::uint64_t>(d); ++i) {
            double a = std::fabs(static_cast<double>(x[i]));
            if (a > tensor_absmax) tensor_absmax = a;
        }
        block.scales[0] = static_cast<float>(tensor_absmax / static_cast<double>(qmax));
    }

    std::vector<double> vals(d);
    std::vector<int> q(d);
    for (std::uint64_t v = 0; v < n_vec; ++v) {
        const float* row = x + v * static_cast<std::uint64_t>(d);
        for (int c = 0; c < d; ++c) {
            vals[c] = static_cast<double>(row[c]);
            if (use_lambda) vals[c] *= static_cast<double>(block.lambda[c]);
        }
        for (int u = 0; u < units_per_vec; ++u) {
            double scale;
            if (scheme.granularity == Granularity::PerTensor) {
                scale = tensor_absmax / static_cast<double>(qmax);
            } else {
                double absmax = 0.0;
                for (int c = 0; c < unit; ++c) {
                    double a = std::fabs(vals[u * unit + c]);
                    if (a > absmax) absmax = a;
                }
                scale = absmax / static_cast<double>(qmax);
                block.scales[v * units_per_vec + u] = static_cast<float>(scale);
            }
            for (int c = 0; c < unit; ++c) {
                int idx = u * unit + c;
                if (scale == 0.0) {
                    q[idx] = 0;
                } else {
                    long code = std::lround(vals[idx] / scale);
                    if (code > qmax) code = qmax;
                    if (code < -qmax) code = -qmax;
                    q[idx] = static_cast<int>(code);
                }
            }
        }
        std::uint8_t* dst = block.codes.data() + v * block.codes_bytes_per_vec();
        if (scheme.bits == 4) {
            for (int c = 0; c < d; c += 2) {
                dst[c / 2] = static_cast<std::uint8_t>(
                    (static_cast<unsigned>(q[c + 1]) << 4) |
                    (static_cast<unsigned>(q[c]) & 0xF));
            }
        } else {
            for (int c = 0; c < d; ++c) dst[c] = static_cast<std::uint8_t>(q[c]);
        }
    }
    return block;
}

CrossvalReport crossval_quantize(const QuantScheme& scheme, const float* x, std::uint64_t n_vec,
                                 const ChannelScale* lambda) {
    QuantizedBlock fast = quantize(scheme, x, n_vec, lambda);
    QuantizedBlock ref = scalar_quantize_reference(scheme, x, n_vec, lambda);

    const int d = scheme.d;
    const int unit = scheme.unit_width();
    const int units_per_vec = d / unit;

    CrossvalReport rep;
    rep.config = "d=" + std::to_string(d) + " bits=" + std::to_string(scheme.bits);
    rep.n_compared = n_vec * static_cast<std::uint64_t>(d);

    for (std::size_t i = 0; i < fast.scales.size(); ++i) {
        double f = fast.scales[i];
        double r = ref.scales[i];
        double denom = std::max(std::fabs(r), 1e-300);
        double rel = std::fabs(f - r) / denom;
        if (f == 0.0 && r == 0.0) rel = 0.0;
        if (rel > rep.max_scale_rel_err) rep.max_scale_rel_err = rel;
    }

    std::vector<std::int8_t> qf(d), qr(d);
    for (std::uint64_t v = 0; v < n_vec; ++v) {
        const std::uint8_t* pf = fast.codes.data() + v * fast.codes_bytes_per_vec();
        const std::uint8_t* pr = ref.codes.data() + v * ref.codes_bytes_per_vec();
        if (scheme.bits == 4) {
            unpack_nibbles({pf, static_cast<std::size_t>(d / 2)}, {qf.data(), qf.size()});
            unpack_nibbles({pr, static_cast<std::size_t>(d / 2)}, {qr.data(), qr.size()});
        } else {
            for (int c = 0; c < d; ++c) {
                qf[c] = static_cast<std::int8_t>(pf[c]);
                qr[c] = static_cast<std::int8_t>(pr[c]);
            }
        }
        const float* row = x + v * static_cast<std::uint64_t>(d);
        for (int c = 0; c < d; ++c) {
            if (qf[c] == qr[c]) {
                ++rep.n_identical;
                continue;
            }
            // Classify: off-by-one at a half-LSB bin boundary counts as a tie.
            bool off_by_one = std::abs(static_cast<int>(qf[c]) - static_cast<int>(qr[c])) == 1;
            double val = static_cast<double>(row[c]);
            if (!ref.lambda.empty()) val *= static_cast<double>(ref.lambda[c]);
            double scale = scheme.granularity == Granularity::PerTensor
                               ? static_cast<double>(ref.scales[0])
                               : static_cast<double>(ref.scales[v * units_per_vec + c / unit]);
            bool near_boundary = false;
            if (scale > 0.0) {
                double t = std::fabs(val) / scale;
                near_boundary = std::fabs(t - (std::floor(t) + 0.5)) < 1e-3;
            }
            if (off_by_one && near_boundary)
                ++rep.n_ties;
            else
                ++rep.n_other;
        }
    }
    rep.pct_identical =
        100.0 * static_cast<double>(rep.n_identical) / static_cast<double>(rep.n_compared);
    return rep;
}

Dft8Report dft8_as_matmul(int n_checked, std::uint64_t seed) {
    Dft8Report rep;
    rep.matrix = DenseMatrix(16, 16);
    const double inv_sqrt8 = 1.0 / std::sqrt(8.0);
    for (int k = 0; k < 8; ++k) {
        for (int j = 0; j < 8; ++j) {
            double ang = -2.0 * kPi * static_cast<double>(k * j) / 8.0;
            double wr = inv_sqrt8 * std::cos(ang);
            double wi = inv_sqrt8 * std::sin(ang);
            // (re', im') = (wr*re - wi*im, wi*re + wr*im)
            rep.matrix.at(2 * k, 2 * j) = wr;
            rep.matrix.at(2 * k, 2 * j + 1) = -wi;
            rep.matrix.at(2 * k + 1, 2 * j) = wi;
            rep.matrix.at(2 * k + 1, 2 * j + 1) = wr;
        }
    }
    rep.n_checked = n_checked;
    for (int trial = 0; trial < n_checked; ++trial) {
        std::vector<double> u(16);
        for (int i = 0; i < 16; ++i)
            u[i] = keyed_normal(seed, static_cast<std::uint64_t>(trial) * 16 + i);
        std::vector<double> via_matrix = matvec(rep.matrix, u);
        // Direct DFT summation on the interleaved pairs.
        for (int k = 0; k < 8; ++k) {
            double re = 0.0, im = 0.0;
            for (int j = 0; j < 8; ++j) {
                double ang = -2.0 * kPi * static_cast<double>(k * j) / 8.0;
                double c = std::cos(ang), s = std::sin(ang);
                re += c * u[2 * j] - s * u[2 * j + 1];
                im += s * u[2 * j] + c * u[2 * j + 1];
            }
            re *= inv_sqrt8;
            im *= inv_sqrt8;
            rep.max_abs_err = std::max(rep.max_abs_err, std::fabs(via_matrix[2 * k] - re));
            rep.max_abs_err = std::max(rep.max_abs_err, std::fabs(via_matrix[2 * k + 1] - im));
        }
    }
    return rep;
}

}  // namespace rkvq::oracle

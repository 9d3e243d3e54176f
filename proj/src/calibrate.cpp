// Copyright (C) 2026 the rkvq authors
// SPDX-License-Identifier: Apache-2.0
//
#include "rkvq/calibrate.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "rkvq/rng.hpp"

namespace rkvq {

using Matrix = Eigen::MatrixXd;

namespace {

Matrix from_row_major(const std::vector<double>& v, int rows, int cols) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r) * cols + c];
    return m;
}

std::vector<double> to_row_major(const Matrix& m) {
    std::vector<double> v(static_cast<std::size_t>(m.rows()) * m.cols());
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(r) * m.cols() + c] = m(r, c);
    return v;
}

// exp(B) by scaling-and-squaring over a truncated Taylor series.
Matrix expm_dense(const Matrix& a) {
    const int n = static_cast<int>(a.rows());
    double nrm = a.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    while (nrm > 0.5) {
        nrm *= 0.5;
        ++squarings;
    }
    Matrix b = a / std::pow(2.0, squarings);
    Matrix result = Matrix::Identity(n, n) + b;
    Matrix term = b;
    for (int j = 2; j <= 64; ++j) {
        term = (term * b) / static_cast<double>(j);
        result += term;
        if (term.norm() <= 1e-18 * result.norm()) break;
    }
    for (int s = 0; s < squarings; ++s) result = result * result;
    return result;
}

// Adjoint of the exponential map: given G = dL/dR at R = exp(A), returns
// dL/dA = dexp_{A^T}(G), via the upper-right block of exp([[A^T, G],[0, A^T]]).
Matrix expm_adjoint(const Matrix& a, const Matrix& g) {
    const int n = static_cast<int>(a.rows());
    Matrix block = Matrix::Zero(2 * n, 2 * n);
    block.topLeftCorner(n, n) = a.transpose();
    block.bottomRightCorner(n, n) = a.transpose();
    block.topRightCorner(n, n) = g;
    Matrix e = expm_dense(block);
    return e.topRightCorner(n, n);
}

Matrix compose_householder(const Matrix& reflectors) {
    const int k = static_cast<int>(reflectors.rows());
    const int d = static_cast<int>(reflectors.cols());
    Matrix m = Matrix::Identity(d, d);
    for (int i = 0; i < k; ++i) {
        Eigen::VectorXd v = reflectors.row(i).transpose();
        double c = v.squaredNorm();
        if (c < 1e-30)
            throw_error(ErrorKind::DegenerateReflector,
                        "householder_compose: reflector " + std::to_string(i) + " is zero");
        Eigen::VectorXd w = m * v;
        m.noalias() -= (2.0 / c) * w * v.transpose();
    }
    return m;
}

// Materializes R (float64) from the parameters. Identity for ScaleOnly.
Matrix materialize_rotation(const RotationParams& p) {
    switch (p.kind) {
        case RotationKind::ScaleOnly:
            return Matrix::Identity(p.d, p.d);
        case RotationKind::Cayley:
        case RotationKind::NoSrftCayley: {
            Matrix u = from_row_major(p.generator, p.d, p.d);
            return expm_dense(u - u.transpose());
        }
        case RotationKind::Householder:
            return compose_householder(from_row_major(p.reflectors, p.k, p.d));
    }
    throw_error(ErrorKind::Config, "unknown rotation kind");
}

void check_calib_scheme(const QuantScheme& scheme) {
    validate_scheme(scheme);
    if (granularity_uses_lambda(scheme.granularity))
        throw_error(ErrorKind::Config,
                    "calibration pipelines carry lambda explicitly; use a plain granularity");
}

struct QuantUnits {
    int unit = 0;           // coordinates per scaling unit
    int units_per_vec = 0;  // d / unit (1 for PerTensor, with shared scale)
    bool per_tensor = false;
};

QuantUnits quant_units(const QuantScheme& scheme) {
    QuantUnits u;
    u.per_tensor = scheme.granularity == Granularity::PerTensor;
    u.unit = u.per_tensor ? scheme.d : scheme.unit_width();
    u.units_per_vec = scheme.d / u.unit;
    return u;
}

}  // namespace

ChannelScale RotationParams::channel_scale() const {
    ChannelScale cs;
    cs.lambda.resize(lambda.size());
    for (std::size_t i = 0; i < lambda.size(); ++i) cs.lambda[i] = static_cast<float>(lambda[i]);
    return cs;
}

RotationKind rotation_kind_from_name(const std::string& name) {
    if (name == "scale") return RotationKind::ScaleOnly;
    if (name == "cayley") return RotationKind::Cayley;
    if (name == "householder") return RotationKind::Householder;
    if (name == "nosrft_cayley") return RotationKind::NoSrftCayley;
    throw_error(ErrorKind::Config, "unknown rotation kind '" + name + "'");
}

std::string rotation_kind_name(RotationKind k) {
    switch (k) {
        case RotationKind::ScaleOnly: return "scale";
        case RotationKind::Cayley: return "cayley";
        case RotationKind::Householder: return "householder";
        case RotationKind::NoSrftCayley: return "nosrft_cayley";
    }
    return "?";
}

std::size_t param_count(const RotationParams& params) {
    const std::size_t d = static_cast<std::size_t>(params.d);
    switch (params.kind) {
        case RotationKind::ScaleOnly: return d;
        case RotationKind::Cayley:
        case RotationKind::NoSrftCayley: return d * d;
        case RotationKind::Householder: return static_cast<std::size_t>(params.k) * d + d;
    }
    return 0;
}

std::vector<double> expm_skew(const std::vector<double>& u, int d) {
    if (static_cast<int>(u.size()) != d * d)
        throw_error(ErrorKind::Shape, "expm_skew: expected d*d entries");
    for (double x : u)
        if (!std::isfinite(x)) throw_error(ErrorKind::Data, "expm_skew: non-finite input");
    Matrix m = from_row_major(u, d, d);
    return to_row_major(expm_dense(m - m.transpose()));
}

std::vector<double> householder_compose(const std::vector<double>& reflectors, int k, int d) {
    if (static_cast<int>(reflectors.size()) != k * d)
        throw_error(ErrorKind::Shape, "householder_compose: expected k*d entries");
    if (k == 0) return to_row_major(Matrix::Identity(d, d));
    return to_row_major(compose_householder(from_row_major(reflectors, k, d)));
}

namespace calib {

namespace {

struct ForwardState {
    Matrix r;        // d x d (identity for ScaleOnly)
    Matrix y;        // X * R^T
    Matrix z;        // lambda-scaled
    Matrix q;        // quant-dequant of z (same domain as z)
    Matrix yhat;     // q / lambda
    Matrix xhat;     // yhat * R
    Matrix inside;   // 1 where the STE passes gradient
    std::vector<double> scales;       // one per unit per vector (1 for PerTensor)
    std::vector<int> argmax_idx;      // per unit: coordinate holding the absmax
    double loss = 0.0;
};

ForwardState run_forward(const RotationParams& p, const QuantScheme& scheme, const double* x,
                         std::size_t n, QuantMode mode,
                         const std::vector<double>* frozen_scales) {
    const int d = p.d;
    if (scheme.d != d) throw_error(ErrorKind::Shape, "scheme.d != params.d");
    if (static_cast<int>(p.lambda.size()) != d)
        throw_error(ErrorKind::Shape, "lambda length != d");
    check_calib_scheme(scheme);
    const QuantUnits units = quant_units(scheme);
    const int qmax = quant_max(scheme.bits);

    ForwardState st;
    st.r = materialize_rotation(p);
    Matrix xm(n, d);
    for (std::size_t t = 0; t < n; ++t)
        for (int c = 0; c < d; ++c) xm(static_cast<int>(t), c) = x[t * d + c];

    st.y = p.has_rotation() ? Matrix(xm * st.r.transpose()) : xm;
    st.z = st.y;
    for (int c = 0; c < d; ++c) st.z.col(c) *= p.lambda[c];

    const std::size_t n_units =
        units.per_tensor ? 1 : n * static_cast<std::size_t>(units.units_per_vec);
    if (mode == QuantMode::SmoothClamp) {
        if (frozen_scales == nullptr || frozen_scales->size() != n_units)
            throw_error(ErrorKind::Shape, "SmoothClamp requires frozen scales per unit");
        st.scales = *frozen_scales;
    } else {
        st.scales.assign(n_units, 0.0);
    }
    st.argmax_idx.assign(n_units, 0);

    st.q = Matrix::Zero(n, d);
    st.inside = Matrix::Ones(n, d);

    if (units.per_tensor && mode == QuantMode::Exact) {
        double absmax = 0.0;
        for (std::size_t t = 0; t < n; ++t)
            for (int c = 0; c < d; ++c) {
                double a = std::fabs(st.z(static_cast<int>(t), c));
                if (a > absmax) absmax = a;
            }
        st.scales[0] = absmax / qmax;
    }

    for (std::size_t t = 0; t < n; ++t) {
        for (int u = 0; u < units.units_per_vec; ++u) {
            const std::size_t unit_idx =
                units.per_tensor ? 0 : t * units.units_per_vec + static_cast<std::size_t>(u);
            double scale = st.scales[unit_idx];
            int amax_c = u * units.unit;
            if (mode == QuantMode::Exact && !units.per_tensor) {
                double absmax = 0.0;
                for (int c = 0; c < units.unit; ++c) {
                    double a = std::fabs(st.z(static_cast<int>(t), u * units.unit + c));
                    if (a > absmax) {
                        absmax = a;
                        amax_c = u * units.unit + c;
                    }
                }
                scale = absmax / qmax;
                st.scales[unit_idx] = scale;
                st.argmax_idx[unit_idx] = amax_c;
            }
            for (int c = 0; c < units.unit; ++c) {
                int col = u * units.unit + c;
                double z = st.z(static_cast<int>(t), col);
                if (scale == 0.0) {
                    st.q(static_cast<int>(t), col) = 0.0;
                    continue;
                }
                if (mode == QuantMode::Exact) {
                    // round half away from zero
                    double code = std::floor(std::fabs(z) / scale + 0.5);
                    if (code > qmax) code = qmax;
                    st.q(static_cast<int>(t), col) = (z < 0 ? -code : code) * scale;
                    st.inside(static_cast<int>(t), col) = std::fabs(z) <= qmax * scale ? 1.0 : 0.0;
                } else {
                    double lim = qmax * scale;
                    double qv = z;
                    if (qv > lim) qv = lim;
                    if (qv < -lim) qv = -lim;
                    st.q(static_cast<int>(t), col) = qv;
                    st.inside(static_cast<int>(t), col) = std::fabs(z) <= lim ? 1.0 : 0.0;
                }
            }
        }
    }

    st.yhat = st.q;
    for (int c = 0; c < d; ++c) st.yhat.col(c) /= p.lambda[c];
    st.xhat = p.has_rotation() ? Matrix(st.yhat * st.r) : st.yhat;
    st.loss = (st.xhat - xm).squaredNorm() / static_cast<double>(n);
    return st;
}

}  // namespace

double loss_only(const RotationParams& params, const QuantScheme& scheme, const double* x,
                 std::size_t n, QuantMode mode, const std::vector<double>* frozen_scales) {
    return run_forward(params, scheme, x, n, mode, frozen_scales).loss;
}

std::vector<double> unit_scales(const RotationParams& params, const QuantScheme& scheme,
                                const double* x, std::size_t n) {
    return run_forward(params, scheme, x, n, QuantMode::Exact, nullptr).scales;
}

LossGrad loss_and_grad(const RotationParams& p, const QuantScheme& scheme, const double* x,
                       std::size_t n, QuantMode mode,
                       const std::vector<double>* frozen_scales) {
    const int d = p.d;
    const QuantUnits units = quant_units(scheme);
    const int qmax = quant_max(scheme.bits);
    ForwardState st = run_forward(p, scheme, x, n, mode, frozen_scales);

    Matrix xm(n, d);
    for (std::size_t t = 0; t < n; ++t)
        for (int c = 0; c < d; ++c) xm(static_cast<int>(t), c) = x[t * d + c];

    LossGrad out;
    out.loss = st.loss;

    Matrix g_xhat = (2.0 / static_cast<double>(n)) * (st.xhat - xm);
    Matrix g_yhat = p.has_rotation() ? Matrix(g_xhat * st.r.transpose()) : g_xhat;

    Matrix g_q = g_yhat;
    for (int c = 0; c < d; ++c) g_q.col(c) /= p.lambda[c];

    // Straight-through: identity through round inside the clip range, zero
    // outside. In Exact mode the dynamic abs-max scale is itself a function
    // of z; its gradient routes to the arg-max coordinate of each unit via
    // d q_i / d scale = (q_i - z_i)/scale inside, q_i/scale when clamped.
    Matrix g_z = g_q.cwiseProduct(st.inside);
    if (mode == QuantMode::Exact) {
        for (std::size_t t = 0; t < n; ++t) {
            for (int u = 0; u < units.units_per_vec; ++u) {
                const std::size_t unit_idx =
                    units.per_tensor ? 0 : t * units.units_per_vec + static_cast<std::size_t>(u);
                double scale = st.scales[unit_idx];
                if (scale == 0.0 || units.per_tensor) continue;
                double gsum = 0.0;
                for (int c = 0; c < units.unit; ++c) {
                    int col = u * units.unit + c;
                    double qv = st.q(static_cast<int>(t), col);
                    double zv = st.z(static_cast<int>(t), col);
                    double coeff = st.inside(static_cast<int>(t), col) != 0.0
                                       ? (qv - zv) / scale
                                       : qv / scale;
                    gsum += g_q(static_cast<int>(t), col) * coeff;
                }
                int amax = st.argmax_idx[unit_idx];
                double zmax = st.z(static_cast<int>(t), amax);
                double sgn = zmax < 0 ? -1.0 : 1.0;
                g_z(static_cast<int>(t), amax) += gsum * sgn / static_cast<double>(qmax);
            }
        }
    }

    Matrix g_y = g_z;
    for (int c = 0; c < d; ++c) g_y.col(c) *= p.lambda[c];

    out.d_lambda.assign(d, 0.0);
    for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            acc += g_z(static_cast<int>(t), c) * st.y(static_cast<int>(t), c);
            acc -= g_yhat(static_cast<int>(t), c) * st.q(static_cast<int>(t), c) /
                   (p.lambda[c] * p.lambda[c]);
        }
        out.d_lambda[c] = acc;
    }

    if (p.has_rotation()) {
        Matrix g_r = g_y.transpose() * xm + st.yhat.transpose() * g_xhat;
        if (p.kind == RotationKind::Cayley || p.kind == RotationKind::NoSrftCayley) {
            Matrix u = from_row_major(p.generator, d, d);
            Matrix a = u - u.transpose();
            Matrix g_a = expm_adjoint(a, g_r);
            Matrix g_u = g_a - g_a.transpose();
            out.d_generator = to_row_major(g_u);
        } else {
            // Chain rule through R = H_1 ... H_k using prefix/suffix products.
            const int k = p.k;
            Matrix refl = from_row_major(p.reflectors, k, d);
            std::vector<Matrix> prefix(k + 1), suffix(k + 1);
            prefix[0] = Matrix::Identity(d, d);
            for (int i = 0; i < k; ++i) {
                Eigen::VectorXd v = refl.row(i).transpose();
                double c = v.squaredNorm();
                Eigen::VectorXd w = prefix[i] * v;
                prefix[i + 1] = prefix[i] - (2.0 / c) * w * v.transpose();
            }
            suffix[k] = Matrix::Identity(d, d);
            for (int i = k - 1; i >= 0; --i) {
                Eigen::VectorXd v = refl.row(i).transpose();
                double c = v.squaredNorm();
                Eigen::VectorXd w = suffix[i + 1].transpose() * v;  // v^T * Suf
                suffix[i] = suffix[i + 1] - (2.0 / c) * v * w.transpose();
            }
            Matrix g_refl(k, d);
            for (int i = 0; i < k; ++i) {
                Eigen::VectorXd v = refl.row(i).transpose();
                double c = v.squaredNorm();
                Matrix m = prefix[i].transpose() * g_r * suffix[i + 1].transpose();
                Eigen::VectorXd mv = m * v;
                Eigen::VectorXd mtv = m.transpose() * v;
                double vmv = v.dot(mv);
                Eigen::VectorXd grad =
                    (-2.0 / c) * (mv + mtv) + (4.0 * vmv / (c * c)) * v;
                g_refl.row(i) = grad.transpose();
            }
            out.d_reflectors = to_row_major(g_refl);
        }
    }
    return out;
}

}  // namespace calib

double reconstruction_mse(const PipelineSpec& pipeline, const QuantScheme& scheme, const float* x,
                          std::size_t n) {
    if (n == 0) throw_error(ErrorKind::Range, "reconstruction_mse: empty batch");
    check_calib_scheme(scheme);
    const int d = scheme.d;
    if (pipeline.transform != nullptr && pipeline.transform->d != d)
        throw_error(ErrorKind::Shape, "reconstruction_mse: transform dimension mismatch");
    if (pipeline.rotation != nullptr && static_cast<int>(pipeline.rotation->size()) != d * d)
        throw_error(ErrorKind::Shape, "reconstruction_mse: rotation must be d x d");
    if (pipeline.lambda != nullptr && static_cast<int>(pipeline.lambda->lambda.size()) != d)
        throw_error(ErrorKind::Shape, "reconstruction_mse: lambda length mismatch");

    std::vector<double> base(n * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < base.size(); ++i) base[i] = static_cast<double>(x[i]);

    std::vector<double> domain = base;
    if (pipeline.transform != nullptr)
        transform_forward_batch<double>(*pipeline.transform, base.data(), n, domain.data());

    RotationParams p;
    p.kind = pipeline.rotation != nullptr ? RotationKind::Cayley : RotationKind::ScaleOnly;
    p.d = d;
    p.lambda.assign(d, 1.0);
    if (pipeline.lambda != nullptr)
        for (int c = 0; c < d; ++c)
            p.lambda[c] = std::max(static_cast<double>(pipeline.lambda->lambda[c]),
                                   static_cast<double>(kLambdaFloor));

    // The forward engine materializes R from a generator; bypass it by
    // running the pipeline directly when an explicit rotation is given.
    Matrix r;
    if (pipeline.rotation != nullptr) r = from_row_major(*pipeline.rotation, d, d);

    Matrix xm(n, d);
    for (std::size_t t = 0; t < n; ++t)
        for (int c = 0; c < d; ++c) xm(static_cast<int>(t), c) = domain[t * d + c];
    Matrix y = pipeline.rotation != nullptr ? Matrix(xm * r.transpose()) : xm;
    Matrix z = y;
    for (int c = 0; c < d; ++c) z.col(c) *= p.lambda[c];

    const QuantUnits units = quant_units(scheme);
    const int qmax = quant_max(scheme.bits);
    Matrix q = Matrix::Zero(n, d);
    double tensor_absmax = 0.0;
    if (units.per_tensor) tensor_absmax = z.cwiseAbs().maxCoeff();
    for (std::size_t t = 0; t < n; ++t) {
        for (int u = 0; u < units.units_per_vec; ++u) {
            double absmax = tensor_absmax;
            if (!units.per_tensor) {
                absmax = 0.0;
                for (int c = 0; c < units.unit; ++c)
                    absmax = std::max(absmax, std::fabs(z(static_cast<int>(t), u * units.unit + c)));
            }
            double scale = absmax / qmax;
            for (int c = 0; c < units.unit; ++c) {
                int col = u * units.unit + c;
                if (scale == 0.0) continue;
                double zv = z(static_cast<int>(t), col);
                double code = std::floor(std::fabs(zv) / scale + 0.5);
                if (code > qmax) code = qmax;
                q(static_cast<int>(t), col) = (zv < 0 ? -code : code) * scale;
            }
        }
    }

    for (int c = 0; c < d; ++c) q.col(c) /= p.lambda[c];
    Matrix xhat_domain = pipeline.rotation != nullptr ? Matrix(q * r) : q;

    std::vector<double> recon(n * static_cast<std::size_t>(d));
    for (std::size_t t = 0; t < n; ++t)
        for (int c = 0; c < d; ++c) recon[t * d + c] = xhat_domain(static_cast<int>(t), c);
    if (pipeline.transform != nullptr) {
        std::vector<double> tmp(recon.size());
        transform_inverse_batch<double>(*pipeline.transform, recon.data(), n, tmp.data());
        recon.swap(tmp);
    }

    double acc = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        double e = recon[i] - base[i];
        acc += e * e;
    }
    return acc / static_cast<double>(n);
}

std::pair<RotationParams, FitReport> fit(RotationKind kind, const CalibConfig& config,
                                         const ActivationBatch& x) {
    if (x.n == 0) throw_error(ErrorKind::Range, "fit: empty calibration batch");
    if (config.steps < 1) throw_error(ErrorKind::Config, "fit: steps must be >= 1");
    check_calib_scheme(config.scheme);
    const int d = config.scheme.d;
    if (static_cast<std::size_t>(d) != x.d)
        throw_error(ErrorKind::Shape, "fit: scheme.d != batch.d");

    RotationParams p;
    p.kind = kind;
    p.d = d;
    p.lambda.assign(d, 1.0);
    if (kind == RotationKind::Cayley || kind == RotationKind::NoSrftCayley) {
        p.generator.assign(static_cast<std::size_t>(d) * d, 0.0);
    } else if (kind == RotationKind::Householder) {
        p.k = config.reflectors > 0 ? config.reflectors : d / 2;
        p.reflectors.assign(static_cast<std::size_t>(p.k) * d, 0.0);
        // Near-identity start: consecutive reflectors share an axis up to
        // 1e-3 noise, so each pair multiplies out to almost the identity.
        for (int i = 0; i < p.k; ++i) {
            int axis = (i / 2) % d;
            for (int c = 0; c < d; ++c) {
                double noise = 1e-3 * keyed_normal(config.seed,
                                                   static_cast<std::uint64_t>(i) * d + c);
                p.reflectors[static_cast<std::size_t>(i) * d + c] =
                    (c == axis ? 1.0 : 0.0) + noise;
            }
        }
    }

    std::vector<double> xd(x.n * x.d);
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = static_cast<double>(x.data[i]);

    const std::size_t n_lambda = static_cast<std::size_t>(d);
    const std::size_t n_rot = p.generator.size() + p.reflectors.size();
    const std::size_t n_params = n_lambda + n_rot;
    std::vector<double> m(n_params, 0.0), v(n_params, 0.0);

    FitReport report;
    report.steps_run = config.steps;
    RotationParams best = p;
    double best_loss = 0.0;

    auto apply_adam = [&](const calib::LossGrad& lg, int step) {
        auto update = [&](std::size_t j, double g, double& value) {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            double mh = m[j] / (1.0 - std::pow(config.beta1, step + 1));
            double vh = v[j] / (1.0 - std::pow(config.beta2, step + 1));
            value -= config.lr * mh / (std::sqrt(vh) + config.eps);
        };
        for (int c = 0; c < d; ++c) {
            update(static_cast<std::size_t>(c), lg.d_lambda[c], p.lambda[c]);
            if (p.lambda[c] < static_cast<double>(kLambdaFloor))
                p.lambda[c] = static_cast<double>(kLambdaFloor);
        }
        for (std::size_t j = 0; j < p.generator.size(); ++j)
            update(n_lambda + j, lg.d_generator[j], p.generator[j]);
        for (std::size_t j = 0; j < p.reflectors.size(); ++j)
            update(n_lambda + j, lg.d_reflectors[j], p.reflectors[j]);
    };

    for (int step = 0; step < config.steps; ++step) {
        calib::LossGrad lg =
            calib::loss_and_grad(p, config.scheme, xd.data(), x.n, calib::QuantMode::Exact);
        if (step == 0) {
            report.mse_initial = lg.loss;
            best = p;
            best_loss = lg.loss;
            report.best_step = 0;
        } else if (lg.loss < best_loss) {
            best = p;
            best_loss = lg.loss;
            report.best_step = step;
        }
        if (report.mse_initial > 0.0 && lg.loss > 10.0 * report.mse_initial)
            throw_error(ErrorKind::Divergence,
                        "fit diverged at step " + std::to_string(step) + ": mse " +
                            std::to_string(lg.loss) + " > 10x initial " +
                            std::to_string(report.mse_initial));
        apply_adam(lg, step);
    }
    double final_loss =
        calib::loss_only(p, config.scheme, xd.data(), x.n, calib::QuantMode::Exact);
    if (final_loss < best_loss) {
        best = p;
        best_loss = final_loss;
        report.best_step = config.steps;
    }

    best.cached_r.resize(static_cast<std::size_t>(d) * d);
    Matrix r = materialize_rotation(best);
    for (int rr = 0; rr < d; ++rr)
        for (int cc = 0; cc < d; ++cc)
            best.cached_r[static_cast<std::size_t>(rr) * d + cc] = static_cast<float>(r(rr, cc));

    report.mse_final = best_loss;
    report.reduction_pct =
        report.mse_initial > 0.0 ? 100.0 * (1.0 - report.mse_final / report.mse_initial) : 0.0;
    return {best, report};
}

ChannelScale lambda_from_channel_max(const float* x_transformed, std::size_t n, std::size_t d) {
    if (n == 0 || d == 0) throw_error(ErrorKind::Range, "lambda_from_channel_max: empty batch");
    ChannelScale cs;
    cs.lambda.assign(d, 0.0f);
    std::vector<double> chmax(d, 0.0);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < d; ++c) {
            double a = std::fabs(static_cast<double>(x_transformed[t * d + c]));
            if (a > chmax[c]) chmax[c] = a;
        }
    for (std::size_t c = 0; c < d; ++c) {
        double m = std::max(chmax[c], static_cast<double>(kLambdaFloor));
        cs.lambda[c] = std::max(static_cast<float>(1.0 / m), kLambdaFloor);
    }
    return cs;
}

ChannelScale lambda_from_channel_max(const ActivationBatch& batch) {
    return lambda_from_channel_max(batch.data.data(), batch.n, batch.d);
}

}  // namespace rkvq

#include "pam/fisher.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pam/errors.hpp"

namespace pam {

FisherDiag::FisherDiag(std::vector<double> values, std::size_t n_samples)
    : values_(std::move(values)), n_samples_(n_samples) {
    if (n_samples_ == 0) throw EmptyDataError("FisherDiag needs at least one sample");
    for (double v : values_) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw NumericalError("FisherDiag entries must be finite and >= 0");
    }
}

FisherDiag FisherDiag::restricted(const CoordMask& keep) const {
    if (keep.dim() != dim()) throw DimensionError("FisherDiag::restricted: mask dimension mismatch");
    std::vector<double> v = values_;
    for (std::size_t j = 0; j < v.size(); ++j) {
        if (!keep[j]) v[j] = 0.0;
    }
    return FisherDiag(std::move(v), n_samples_);
}

FisherDiag fisher_diag(const ModelSpec& spec, const ParamVector& theta, const Batch& data, const CoordMask* mask) {
    if (data.size() == 0) throw EmptyDataError("fisher_diag on empty dataset");
    std::vector<double> acc(theta.dim(), 0.0);
    accumulate_squared_sample_grads(spec, theta, data, mask, acc);
    const double inv_n = 1.0 / static_cast<double>(data.size());
    for (auto& v : acc) v *= inv_n;
    return FisherDiag(std::move(acc), data.size());
}

double quad_form(const FisherDiag& diag, const ParamVector& v) {
    if (diag.dim() != v.dim()) {
        throw DimensionError(fmt::format("quad_form: fisher dim {} vs vector dim {}", diag.dim(), v.dim()));
    }
    double s = 0.0;
    for (std::size_t j = 0; j < v.dim(); ++j) s += diag[j] * (v[j] * v[j]);
    return s;
}

double cross_form(const FisherDiag& diag, const ParamVector& u, const ParamVector& v) {
    if (diag.dim() != u.dim() || diag.dim() != v.dim()) {
        throw DimensionError(
            fmt::format("cross_form: fisher dim {} vs vector dims {}, {}", diag.dim(), u.dim(), v.dim()));
    }
    double s = 0.0;
    for (std::size_t j = 0; j < u.dim(); ++j) s += diag[j] * (u[j] * v[j]);
    return s;
}

double quad_form_fd(const LossFn& loss, const ParamVector& theta, const ParamVector& delta, double eps) {
    if (!(eps > 0.0)) throw ConfigError("quad_form_fd: eps must be > 0");
    if (theta.dim() != delta.dim()) throw DimensionError("quad_form_fd: theta/delta dimension mismatch");
    const double l0 = loss(theta);
    const double lp = loss(axpy(theta, eps, delta));
    const double lm = loss(axpy(theta, -eps, delta));
    if (!std::isfinite(l0) || !std::isfinite(lp) || !std::isfinite(lm)) {
        throw NumericalError("quad_form_fd: non-finite loss");
    }
    return (lp + lm - 2.0 * l0) / (eps * eps);
}

double quad_form_fd(const ModelSpec& spec, const ParamVector& theta, const ParamVector& delta, double eps,
                    const Batch& batch) {
    return quad_form_fd([&](const ParamVector& p) { return ce_loss(spec, p, batch); }, theta, delta, eps);
}

namespace {

void require_logistic(const ModelSpec& spec, const ParamVector& theta, const Batch& data) {
    if (spec.kind != ModelKind::logistic) {
        throw UnsupportedModelError("analytic Hessian oracle supports only the logistic model");
    }
    if (theta.dim() != spec.dim()) throw DimensionError("hessian oracle: theta dimension mismatch");
    if (data.size() == 0) throw EmptyDataError("hessian oracle: empty dataset");
}

// Softmax over the class window for every sample; zero outside the window.
Matrix window_probs(const ModelSpec& spec, const ParamVector& theta, const Batch& data) {
    Matrix logits = forward(spec, theta, data.inputs);
    const int b = spec.window_begin();
    const int e = spec.window_end();
    Matrix p(data.size(), spec.num_classes);
    for (std::size_t n = 0; n < data.size(); ++n) {
        double zmax = logits(n, static_cast<std::size_t>(b));
        for (int c = b; c < e; ++c) zmax = std::max(zmax, logits(n, static_cast<std::size_t>(c)));
        double sum = 0.0;
        for (int c = b; c < e; ++c) sum += std::exp(logits(n, static_cast<std::size_t>(c)) - zmax);
        for (int c = b; c < e; ++c) {
            p(n, static_cast<std::size_t>(c)) = std::exp(logits(n, static_cast<std::size_t>(c)) - zmax) / sum;
        }
    }
    return p;
}

}  // namespace

double logistic_hessian_quad_oracle(const ModelSpec& spec, const ParamVector& theta, const ParamVector& delta,
                                    const Batch& data) {
    require_logistic(spec, theta, data);
    if (delta.dim() != theta.dim()) throw DimensionError("hessian oracle: delta dimension mismatch");
    const std::size_t d = spec.input_dim;
    const std::size_t C = spec.num_classes;
    const Matrix p = window_probs(spec, theta, data);
    const int b = spec.window_begin();
    const int e = spec.window_end();

    double total = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) {
        // u = X_i Δ: the directional change of every logit.
        double mean_u = 0.0;
        double mean_u2 = 0.0;
        for (int c = b; c < e; ++c) {
            const auto uc = static_cast<std::size_t>(c);
            double u = delta[C * d + uc];
            for (std::size_t k = 0; k < d; ++k) u += delta[uc * d + k] * data.inputs(n, k);
            mean_u += p(n, uc) * u;
            mean_u2 += p(n, uc) * u * u;
        }
        // uᵀ(diag(p) − ppᵀ)u
        total += mean_u2 - mean_u * mean_u;
    }
    return total / static_cast<double>(data.size());
}

std::vector<double> logistic_hessian_diag(const ModelSpec& spec, const ParamVector& theta, const Batch& data) {
    require_logistic(spec, theta, data);
    const std::size_t d = spec.input_dim;
    const std::size_t C = spec.num_classes;
    const Matrix p = window_probs(spec, theta, data);
    std::vector<double> h(theta.dim(), 0.0);
    for (std::size_t n = 0; n < data.size(); ++n) {
        for (int c = spec.window_begin(); c < spec.window_end(); ++c) {
            const auto uc = static_cast<std::size_t>(c);
            const double w = p(n, uc) * (1.0 - p(n, uc));
            for (std::size_t k = 0; k < d; ++k) h[uc * d + k] += w * data.inputs(n, k) * data.inputs(n, k);
            h[C * d + uc] += w;
        }
    }
    for (auto& v : h) v /= static_cast<double>(data.size());
    return h;
}

}  // namespace pam

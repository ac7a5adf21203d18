#include "pam/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "pam/errors.hpp"

namespace pam {

std::string to_string(ModelKind kind) { return kind == ModelKind::logistic ? "logistic" : "mlp2"; }

std::string to_string(Activation act) {
    switch (act) {
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
    }
    return "tanh";
}

ModelKind parse_model_kind(const std::string& s) {
    if (s == "logistic") return ModelKind::logistic;
    if (s == "mlp2") return ModelKind::mlp2;
    throw ConfigError(fmt::format("unknown model kind '{}'", s));
}

Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "softplus") return Activation::softplus;
    throw ConfigError(fmt::format("unknown activation '{}'", s));
}

std::size_t ModelSpec::dim() const {
    const std::size_t C = num_classes;
    if (kind == ModelKind::logistic) return C * input_dim + C;
    return hidden_dim * input_dim + hidden_dim + C * hidden_dim + C;
}

ModelSpec ModelSpec::with_window(int begin, int end) const {
    ModelSpec s = *this;
    s.class_begin = begin;
    s.class_end = end;
    s.validate();
    return s;
}

void ModelSpec::validate() const {
    if (input_dim == 0 || num_classes == 0) throw ConfigError("model: input_dim and num_classes must be >= 1");
    if (kind == ModelKind::mlp2) {
        if (hidden_dim == 0) throw ConfigError("model: hidden_dim must be >= 1 for mlp2");
        if (adapter_rank == 0 || adapter_rank > std::min(hidden_dim, input_dim)) {
            throw ConfigError(fmt::format("model: adapter_rank {} outside [1, min(h={}, d={})]", adapter_rank,
                                          hidden_dim, input_dim));
        }
    }
    const int e = window_end();
    if (class_begin < 0 || e > static_cast<int>(num_classes) || class_begin >= e) {
        throw ConfigError(fmt::format("model: class window [{}, {}) invalid for {} classes", class_begin, e,
                                      num_classes));
    }
}

Site ModelSpec::hidden_site() const {
    if (kind != ModelKind::mlp2) throw UnsupportedModelError("logistic model has no hidden weight block");
    return Site{"W1", 0, hidden_dim, input_dim};
}

Site ModelSpec::head_weight_site() const {
    if (kind == ModelKind::logistic) return Site{"W", 0, num_classes, input_dim};
    return Site{"W2", hidden_dim * input_dim + hidden_dim, num_classes, hidden_dim};
}

std::size_t ModelSpec::head_bias_offset() const {
    const Site w = head_weight_site();
    return w.offset + w.size();
}

CoordMask ModelSpec::head_mask(std::span<const int> classes) const {
    CoordMask mask(dim());
    const Site w = head_weight_site();
    const std::size_t bias = head_bias_offset();
    for (int c : classes) {
        if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
            throw LabelError(fmt::format("class {} outside head of {} classes", c, num_classes));
        }
        const auto uc = static_cast<std::size_t>(c);
        mask.set_range(w.offset + uc * w.cols, w.cols);
        mask.set(bias + uc);
    }
    return mask;
}

CoordMask ModelSpec::adapter_mask() const {
    CoordMask mask(dim());
    if (kind == ModelKind::mlp2) {
        const Site s = hidden_site();
        mask.set_range(s.offset, s.size());
    }
    return mask;
}

double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

namespace {

double activate(Activation act, double z) {
    switch (act) {
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::softplus: return z > 30.0 ? z : std::log1p(std::exp(z));
    }
    return z;
}

// Derivative expressed through the pre-activation z and activation a.
double activate_grad(Activation act, double z, double a) {
    switch (act) {
    case Activation::tanh: return 1.0 - a * a;
    case Activation::sigmoid: return a * (1.0 - a);
    case Activation::softplus: return 1.0 / (1.0 + std::exp(-z));
    }
    return 1.0;
}

void check_theta(const ModelSpec& spec, const ParamVector& theta) {
    if (theta.dim() != spec.dim()) {
        throw DimensionError(fmt::format("theta has dim {}, model layout needs {}", theta.dim(), spec.dim()));
    }
}

void check_inputs(const ModelSpec& spec, const Matrix& inputs) {
    if (inputs.cols != spec.input_dim) {
        throw DimensionError(fmt::format("inputs have {} features, model expects {}", inputs.cols, spec.input_dim));
    }
}

void check_batch(const ModelSpec& spec, const Batch& batch) {
    if (batch.size() == 0) throw EmptyDataError("empty batch");
    check_inputs(spec, batch.inputs);
    if (batch.inputs.rows != batch.size()) {
        throw DimensionError(fmt::format("batch has {} rows but {} labels", batch.inputs.rows, batch.size()));
    }
    const int b = spec.window_begin();
    const int e = spec.window_end();
    for (int y : batch.labels) {
        if (y < b || y >= e) throw LabelError(fmt::format("label {} outside class window [{}, {})", y, b, e));
    }
}

// Per-sample workspace shared by the forward and backward passes.
struct Sample {
    std::vector<double> z1;      // hidden pre-activation (mlp2)
    std::vector<double> hidden;  // activation, or the input itself for logistic
    std::vector<double> logits;  // all classes
    std::vector<double> dlogit;  // ∂(−log p_y)/∂z over the window, zero elsewhere
    std::vector<double> dz1;

    explicit Sample(const ModelSpec& spec)
        : z1(spec.kind == ModelKind::mlp2 ? spec.hidden_dim : 0),
          hidden(spec.kind == ModelKind::mlp2 ? spec.hidden_dim : spec.input_dim),
          logits(spec.num_classes),
          dlogit(spec.num_classes),
          dz1(spec.kind == ModelKind::mlp2 ? spec.hidden_dim : 0) {}
};

void forward_sample(const ModelSpec& spec, const ParamVector& theta, std::span<const double> x, Sample& s) {
    const double* p = theta.values().data();
    const std::size_t d = spec.input_dim;
    const std::size_t C = spec.num_classes;
    std::size_t feat = d;
    const double* head_w = nullptr;
    const double* head_b = nullptr;

    if (spec.kind == ModelKind::mlp2) {
        const std::size_t h = spec.hidden_dim;
        const double* w1 = p;
        const double* b1 = p + h * d;
        for (std::size_t i = 0; i < h; ++i) {
            double acc = b1[i];
            const double* wr = w1 + i * d;
            for (std::size_t k = 0; k < d; ++k) acc += wr[k] * x[k];
            s.z1[i] = acc;
            s.hidden[i] = activate(spec.activation, acc);
        }
        feat = h;
        head_w = p + h * d + h;
        head_b = head_w + C * h;
    } else {
        std::copy(x.begin(), x.end(), s.hidden.begin());
        head_w = p;
        head_b = p + C * d;
    }

    for (std::size_t c = 0; c < C; ++c) {
        double acc = head_b[c];
        const double* wr = head_w + c * feat;
        for (std::size_t k = 0; k < feat; ++k) acc += wr[k] * s.hidden[k];
        s.logits[c] = acc;
    }
}

// Returns −log p̂_y and fills s.dlogit = p − onehot(y) over the window.
double sample_loss(const ModelSpec& spec, int y, Sample& s) {
    const int b = spec.window_begin();
    const int e = spec.window_end();
    double zmax = -std::numeric_limits<double>::infinity();
    for (int c = b; c < e; ++c) zmax = std::max(zmax, s.logits[c]);
    double sum = 0.0;
    for (int c = b; c < e; ++c) sum += std::exp(s.logits[c] - zmax);
    const double lse = zmax + std::log(sum);
    std::fill(s.dlogit.begin(), s.dlogit.end(), 0.0);
    for (int c = b; c < e; ++c) s.dlogit[c] = std::exp(s.logits[c] - lse);
    s.dlogit[y] -= 1.0;
    return lse - s.logits[y];
}

// Adds scale·∂loss_n/∂θ into g (dense), honoring an optional mask.
void backward_sample(const ModelSpec& spec, const ParamVector& theta, std::span<const double> x, Sample& s,
                     double scale, std::span<double> g) {
    const double* p = theta.values().data();
    const std::size_t d = spec.input_dim;
    const std::size_t C = spec.num_classes;
    const int b = spec.window_begin();
    const int e = spec.window_end();

    if (spec.kind == ModelKind::logistic) {
        double* gw = g.data();
        double* gb = g.data() + C * d;
        for (int c = b; c < e; ++c) {
            const double dz = scale * s.dlogit[c];
            double* row = gw + static_cast<std::size_t>(c) * d;
            for (std::size_t k = 0; k < d; ++k) row[k] += dz * x[k];
            gb[c] += dz;
        }
        return;
    }

    const std::size_t h = spec.hidden_dim;
    const double* w2 = p + h * d + h;
    double* gw1 = g.data();
    double* gb1 = g.data() + h * d;
    double* gw2 = g.data() + h * d + h;
    double* gb2 = gw2 + C * h;

    std::fill(s.dz1.begin(), s.dz1.end(), 0.0);
    for (int c = b; c < e; ++c) {
        const double dz = scale * s.dlogit[c];
        const auto uc = static_cast<std::size_t>(c);
        double* row = gw2 + uc * h;
        const double* wrow = w2 + uc * h;
        for (std::size_t k = 0; k < h; ++k) {
            row[k] += dz * s.hidden[k];
            s.dz1[k] += dz * wrow[k];
        }
        gb2[c] += dz;
    }
    for (std::size_t i = 0; i < h; ++i) {
        const double dz = s.dz1[i] * activate_grad(spec.activation, s.z1[i], s.hidden[i]);
        double* row = gw1 + i * d;
        for (std::size_t k = 0; k < d; ++k) row[k] += dz * x[k];
        gb1[i] += dz;
    }
}

}  // namespace

Matrix forward(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs) {
    check_theta(spec, theta);
    check_inputs(spec, inputs);
    Matrix out(inputs.rows, spec.num_classes);
    Sample s(spec);
    for (std::size_t n = 0; n < inputs.rows; ++n) {
        forward_sample(spec, theta, inputs.row(n), s);
        std::copy(s.logits.begin(), s.logits.end(), out.row(n).begin());
    }
    return out;
}

double ce_loss(const ModelSpec& spec, const ParamVector& theta, const Batch& batch) {
    check_theta(spec, theta);
    check_batch(spec, batch);
    std::vector<double> per_sample(batch.size());
    Sample s(spec);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        forward_sample(spec, theta, batch.inputs.row(n), s);
        per_sample[n] = sample_loss(spec, batch.labels[n], s);
    }
    return pairwise_sum(per_sample) / static_cast<double>(batch.size());
}

LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                       const CoordMask* trainable) {
    check_theta(spec, theta);
    check_batch(spec, batch);
    if (trainable && !trainable->empty() && trainable->dim() != theta.dim()) {
        throw DimensionError("trainable mask dimension mismatch");
    }
    LossGrad out{0.0, ParamVector(theta.dim())};
    std::vector<double> per_sample(batch.size());
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    Sample s(spec);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto x = batch.inputs.row(n);
        forward_sample(spec, theta, x, s);
        per_sample[n] = sample_loss(spec, batch.labels[n], s);
        backward_sample(spec, theta, x, s, inv_n, out.grad.values());
    }
    out.loss = pairwise_sum(per_sample) * inv_n;
    if (trainable && !trainable->empty()) {
        for (std::size_t j = 0; j < theta.dim(); ++j) {
            if (!(*trainable)[j]) out.grad[j] = 0.0;
        }
    }
    return out;
}

ParamVector grad(const ModelSpec& spec, const ParamVector& theta, const Batch& batch, const CoordMask* trainable) {
    return loss_and_grad(spec, theta, batch, trainable).grad;
}

void accumulate_squared_sample_grads(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                                     const CoordMask* mask, std::span<double> acc) {
    check_theta(spec, theta);
    check_batch(spec, batch);
    if (acc.size() != theta.dim()) throw DimensionError("fisher accumulator dimension mismatch");
    if (mask && !mask->empty() && mask->dim() != theta.dim()) throw DimensionError("fisher mask dimension mismatch");

    const std::size_t d = spec.input_dim;
    const std::size_t C = spec.num_classes;
    const int b = spec.window_begin();
    const int e = spec.window_end();
    const bool masked = mask && !mask->empty();
    auto keep = [&](std::size_t j) { return !masked || (*mask)[j]; };
    auto add_sq = [&](std::size_t j, double v) {
        if (keep(j)) acc[j] += v * v;
    };

    const double* p = theta.values().data();
    Sample s(spec);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto x = batch.inputs.row(n);
        forward_sample(spec, theta, x, s);
        sample_loss(spec, batch.labels[n], s);
        // ∂ log p = −∂ loss; the square drops the sign.
        if (spec.kind == ModelKind::logistic) {
            for (int c = b; c < e; ++c) {
                const auto uc = static_cast<std::size_t>(c);
                const double dz = s.dlogit[uc];
                for (std::size_t k = 0; k < d; ++k) add_sq(uc * d + k, dz * x[k]);
                add_sq(C * d + uc, dz);
            }
            continue;
        }
        const std::size_t h = spec.hidden_dim;
        const double* w2 = p + h * d + h;
        const std::size_t off_w2 = h * d + h;
        const std::size_t off_b2 = off_w2 + C * h;
        std::fill(s.dz1.begin(), s.dz1.end(), 0.0);
        for (int c = b; c < e; ++c) {
            const auto uc = static_cast<std::size_t>(c);
            const double dz = s.dlogit[uc];
            for (std::size_t k = 0; k < h; ++k) {
                add_sq(off_w2 + uc * h + k, dz * s.hidden[k]);
                s.dz1[k] += dz * w2[uc * h + k];
            }
            add_sq(off_b2 + uc, dz);
        }
        for (std::size_t i = 0; i < h; ++i) {
            const double dz = s.dz1[i] * activate_grad(spec.activation, s.z1[i], s.hidden[i]);
            for (std::size_t k = 0; k < d; ++k) add_sq(i * d + k, dz * x[k]);
            add_sq(h * d + i, dz);
        }
    }
}

std::vector<int> predict(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs,
                         std::span<const int> classes) {
    check_theta(spec, theta);
    check_inputs(spec, inputs);
    std::vector<int> candidates(classes.begin(), classes.end());
    if (candidates.empty()) {
        for (int c = spec.window_begin(); c < spec.window_end(); ++c) candidates.push_back(c);
    }
    std::sort(candidates.begin(), candidates.end());
    for (int c : candidates) {
        if (c < 0 || static_cast<std::size_t>(c) >= spec.num_classes) {
            throw LabelError(fmt::format("class {} outside head of {} classes", c, spec.num_classes));
        }
    }

    std::vector<int> out(inputs.rows);
    Sample s(spec);
    for (std::size_t n = 0; n < inputs.rows; ++n) {
        forward_sample(spec, theta, inputs.row(n), s);
        int best = candidates.front();
        for (int c : candidates) {
            if (s.logits[c] > s.logits[best]) best = c;  // strict: lowest id wins ties
        }
        out[n] = best;
    }
    return out;
}

double accuracy(const ModelSpec& spec, const ParamVector& theta, const Batch& data, std::span<const int> classes) {
    if (data.size() == 0) throw EmptyDataError("accuracy on empty dataset");
    const auto pred = predict(spec, theta, data.inputs, classes);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < data.size(); ++n) {
        if (pred[n] == data.labels[n]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace pam

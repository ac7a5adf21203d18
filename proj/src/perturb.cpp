#include "pam/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "pam/errors.hpp"

namespace pam {

std::string to_string(PerturbMode mode) {
    switch (mode) {
    case PerturbMode::stochastic: return "stochastic";
    case PerturbMode::exact3: return "exact3";
    case PerturbMode::off: return "off";
    case PerturbMode::gauss_control: return "gauss_control";
    }
    return "off";
}

PerturbMode parse_perturb_mode(const std::string& s) {
    if (s == "stochastic") return PerturbMode::stochastic;
    if (s == "exact3") return PerturbMode::exact3;
    if (s == "off") return PerturbMode::off;
    if (s == "gauss_control") return PerturbMode::gauss_control;
    throw ConfigError(fmt::format("unknown perturbation mode '{}'", s));
}

PerturbConfig PerturbConfig::from_lambda(double eps, double lambda, PerturbMode mode) {
    if (!(eps > 0.0)) throw ConfigError("perturb: eps must be > 0");
    if (lambda < 0.0 || lambda > eps * eps / 2.0) {
        throw ConfigError(fmt::format("perturb: lambda {} outside [0, eps^2/2 = {}]", lambda, eps * eps / 2.0));
    }
    PerturbConfig cfg;
    cfg.eps = eps;
    cfg.p0 = 1.0 - 2.0 * lambda / (eps * eps);
    cfg.mode = mode;
    return cfg;
}

void PerturbConfig::validate() const {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("perturb: eps must be finite and > 0");
    if (!(p0 >= 0.0 && p0 <= 1.0)) {
        throw ConfigError(fmt::format("perturb: p0 = {} outside [0, 1] (lambda exceeds eps^2/2)", p0));
    }
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs and batch_size must be >= 1");
    if (!(lr_adapter > 0.0) || !(lr_head > 0.0)) throw ConfigError("train: learning rates must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
        throw ConfigError("train: invalid AdamW moment parameters");
    }
    if (!(adapter_init_std > 0.0)) throw ConfigError("train: adapter_init_std must be > 0");
}

double sample_perturbation(const rng::CounterRng& stream, std::uint64_t counter, const PerturbConfig& cfg) {
    const double u = stream.uniform(counter);
    if (u < cfg.p_minus()) return -cfg.eps;
    if (u < cfg.p_minus() + cfg.p0) return 0.0;
    return cfg.eps;
}

std::uint64_t step_counter(int epoch, int step) {
    return (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint32_t>(step);
}

double perturbed_loss(const ModelSpec& spec, const ParamVector& theta_hat_prev, const ParamVector& adapter_delta,
                      double eps_tilde, const Batch& batch) {
    const double loss = ce_loss(spec, axpy(theta_hat_prev, 1.0 + eps_tilde, adapter_delta), batch);
    if (!std::isfinite(loss)) throw NumericalError("perturbed_loss: non-finite loss");
    return loss;
}

double regularized_loss_exact3(const ModelSpec& spec, const ParamVector& theta_hat_prev,
                               const ParamVector& adapter_delta, const PerturbConfig& cfg, const Batch& batch) {
    cfg.validate();
    const double l0 = perturbed_loss(spec, theta_hat_prev, adapter_delta, 0.0, batch);
    const double lp = perturbed_loss(spec, theta_hat_prev, adapter_delta, cfg.eps, batch);
    const double lm = perturbed_loss(spec, theta_hat_prev, adapter_delta, -cfg.eps, batch);
    return cfg.p0 * l0 + cfg.p_plus() * lp + cfg.p_minus() * lm;
}

double regularized_loss_exact3(const LossFn& loss, const ParamVector& theta, const ParamVector& delta,
                               const PerturbConfig& cfg) {
    cfg.validate();
    const double l0 = loss(theta);
    const double lp = loss(axpy(theta, cfg.eps, delta));
    const double lm = loss(axpy(theta, -cfg.eps, delta));
    return cfg.p0 * l0 + cfg.p_plus() * lp + cfg.p_minus() * lm;
}

namespace {

Batch gather(const Batch& src, std::span<const std::size_t> rows) {
    Batch b;
    b.inputs = Matrix(rows.size(), src.inputs.cols);
    b.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = src.inputs.row(rows[i]);
        std::copy(r.begin(), r.end(), b.inputs.row(i).begin());
        b.labels.push_back(src.labels[rows[i]]);
    }
    return b;
}

// Trainable state of one task: adapter factors plus the new head rows.
struct TaskParams {
    bool has_adapter = false;
    LowRankAdapter adapter;
    std::vector<std::size_t> head_coords;
    std::vector<double> head_delta;

    ParamVector delta(std::size_t dim) const {
        ParamVector d(dim);
        if (has_adapter) add_materialized(adapter, 1.0, d);
        for (std::size_t i = 0; i < head_coords.size(); ++i) d[head_coords[i]] = head_delta[i];
        return d;
    }
};

struct FactorGrads {
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> head;

    explicit FactorGrads(const TaskParams& p)
        : a(p.has_adapter ? p.adapter.a.data.size() : 0, 0.0),
          b(p.has_adapter ? p.adapter.b.data.size() : 0, 0.0),
          head(p.head_coords.size(), 0.0) {}

    double norm() const {
        double s = 0.0;
        for (double v : a) s += v * v;
        for (double v : b) s += v * v;
        for (double v : head) s += v * v;
        return std::sqrt(s);
    }
};

// Chain rule from the dense gradient at θ̂ + scale·Δ to the factors:
// ∂/∂A = scale·G·Bᵀ, ∂/∂B = scale·Aᵀ·G, ∂/∂head = scale·g_head.
void accumulate_factor_grads(const TaskParams& p, const ParamVector& dense, double scale, FactorGrads& out) {
    if (p.has_adapter) {
        const auto& ad = p.adapter;
        const Site& s = ad.site;
        const double* G = dense.values().data() + s.offset;
        for (std::size_t i = 0; i < s.rows; ++i) {
            const double* grow = G + i * s.cols;
            for (std::size_t r = 0; r < ad.rank; ++r) {
                const auto brow = ad.b.row(r);
                double acc = 0.0;
                for (std::size_t j = 0; j < s.cols; ++j) acc += grow[j] * brow[j];
                out.a[i * ad.rank + r] += scale * acc;
                const double air = ad.a(i, r);
                double* gb = out.b.data() + r * s.cols;
                for (std::size_t j = 0; j < s.cols; ++j) gb[j] += scale * air * grow[j];
            }
        }
    }
    for (std::size_t i = 0; i < p.head_coords.size(); ++i) out.head[i] += scale * dense[p.head_coords[i]];
}

void check_divergence(double loss, int task_id, int epoch) {
    if (!std::isfinite(loss) || loss > 1e6) {
        throw DivergenceError(fmt::format("task {}: training diverged at epoch {} (loss {})", task_id, epoch, loss));
    }
}

}  // namespace

TrainResult train_task(const ModelSpec& spec, const ParamVector& theta_hat_prev, const TaskDataset& task,
                       const TrainConfig& tcfg, const PerturbConfig& pcfg, std::span<const int> new_classes) {
    spec.validate();
    tcfg.validate();
    pcfg.validate();
    if (theta_hat_prev.dim() != spec.dim()) throw DimensionError("train_task: theta dimension mismatch");
    if (task.train.size() == 0) throw EmptyDataError(fmt::format("task {}: empty training set", task.task_id));

    const std::size_t dim = spec.dim();
    const auto task_key = static_cast<std::uint64_t>(task.task_id);

    TaskParams params;
    if (spec.kind == ModelKind::mlp2) {
        params.has_adapter = true;
        params.adapter = LowRankAdapter(spec.hidden_site(), spec.adapter_rank);
        auto eng = rng::engine(tcfg.seed, rng::Purpose::adapter_init, {task_key});
        std::normal_distribution<double> nd(0.0, tcfg.adapter_init_std);
        for (auto& v : params.adapter.a.data) v = nd(eng);
        // b stays zero so the materialized update starts at zero.
    }
    params.head_coords = spec.head_mask(new_classes).indices();
    params.head_delta.assign(params.head_coords.size(), 0.0);

    CoordMask trainable = spec.adapter_mask() | spec.head_mask(new_classes);

    const AdamWConfig acfg = tcfg.adamw();
    AdamW opt_a(params.has_adapter ? params.adapter.a.data.size() : 0, acfg);
    AdamW opt_b(params.has_adapter ? params.adapter.b.data.size() : 0, acfg);
    AdamW opt_head(params.head_delta.size(), acfg);

    const rng::CounterRng branch_stream{rng::derive(tcfg.seed, {static_cast<std::uint64_t>(rng::Purpose::perturb_branch), task_key})};

    const std::size_t n = task.train.size();
    const auto bs = static_cast<std::size_t>(tcfg.batch_size);
    std::vector<std::size_t> order(n);

    TrainResult result;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_eng = rng::engine(tcfg.seed, rng::Purpose::shuffle, {task_key, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), shuffle_eng);

        EpochLog elog;
        elog.epoch = epoch;
        std::vector<double> step_losses;
        double grad_norm_sum = 0.0;
        int step = 0;
        for (std::size_t start = 0; start < n; start += bs, ++step) {
            const std::size_t len = std::min(bs, n - start);
            const Batch batch = gather(task.train, std::span<const std::size_t>(order).subspan(start, len));
            const ParamVector delta = params.delta(dim);
            FactorGrads fg(params);
            double step_loss = 0.0;

            if (pcfg.mode == PerturbMode::exact3) {
                const std::array<double, 3> shifts{-pcfg.eps, 0.0, pcfg.eps};
                const std::array<double, 3> weights{pcfg.p_minus(), pcfg.p0, pcfg.p_plus()};
                for (std::size_t k = 0; k < 3; ++k) {
                    if (weights[k] == 0.0) continue;
                    const double scale = 1.0 + shifts[k];
                    const LossGrad lg = loss_and_grad(spec, axpy(theta_hat_prev, scale, delta), batch, &trainable);
                    step_loss += weights[k] * lg.loss;
                    accumulate_factor_grads(params, lg.grad, weights[k] * scale, fg);
                }
                elog.branch_counts[1] += 1;
            } else {
                const double eps_tilde = pcfg.mode == PerturbMode::off
                                             ? 0.0
                                             : sample_perturbation(branch_stream, step_counter(epoch, step), pcfg);
                elog.branch_counts[eps_tilde < 0.0 ? 0 : (eps_tilde > 0.0 ? 2 : 1)] += 1;

                ParamVector theta;
                double scale = 1.0;
                if (pcfg.mode == PerturbMode::gauss_control) {
                    // Detached noise on the trainable support with ‖ξ‖ = ε‖Δ‖.
                    theta = axpy(theta_hat_prev, 1.0, delta);
                    const double target = pcfg.eps * norm(delta);
                    if (eps_tilde != 0.0 && target > 0.0) {
                        auto eng = rng::engine(tcfg.seed, rng::Purpose::gauss_noise,
                                               {task_key, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step)});
                        std::normal_distribution<double> nd(0.0, 1.0);
                        ParamVector xi(dim);
                        for (std::size_t j = 0; j < dim; ++j) {
                            if (trainable[j]) xi[j] = nd(eng);
                        }
                        const double xn = norm(xi);
                        if (xn > 0.0) theta = axpy(theta, target / xn, xi);
                    }
                } else {
                    scale = 1.0 + eps_tilde;
                    theta = axpy(theta_hat_prev, scale, delta);
                }
                const LossGrad lg = loss_and_grad(spec, theta, batch, &trainable);
                step_loss = lg.loss;
                accumulate_factor_grads(params, lg.grad, scale, fg);
            }

            check_divergence(step_loss, task.task_id, epoch);
            step_losses.push_back(step_loss);
            grad_norm_sum += fg.norm();

            if (params.has_adapter) {
                opt_a.step(params.adapter.a.data, fg.a, tcfg.lr_adapter);
                opt_b.step(params.adapter.b.data, fg.b, tcfg.lr_adapter);
            }
            opt_head.step(params.head_delta, fg.head, tcfg.lr_head);
        }
        elog.mean_loss = pairwise_sum(step_losses) / static_cast<double>(step_losses.size());
        elog.grad_norm = grad_norm_sum / static_cast<double>(step);
        result.log.push_back(elog);
    }

    result.theta_star = axpy(theta_hat_prev, 1.0, params.delta(dim));
    result.theta_star.require_finite("train_task");
    return result;
}

}  // namespace pam

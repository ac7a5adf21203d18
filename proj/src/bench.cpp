#include "pam/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "pam/adamw.hpp"
#include "pam/errors.hpp"
#include "pam/fisher.hpp"
#include "pam/rng.hpp"

namespace pam {

namespace {

// Sub-keys of a replicate seed.
enum class RunKey : std::uint64_t { stream = 1, pretrain, train };

}  // namespace

ModelSpec task_spec(const ModelSpec& spec, const TaskDataset& task) {
    const int hi = *std::max_element(task.classes.begin(), task.classes.end());
    return spec.with_window(0, hi + 1);
}

std::string to_string(Method m) {
    switch (m) {
    case Method::naive: return "naive";
    case Method::avg_fixed: return "avg_fixed";
    case Method::merge_only: return "merge_only";
    case Method::pm_full: return "pm_full";
    case Method::pm_gauss: return "pm_gauss";
    }
    return "naive";
}

Method parse_method(const std::string& s) {
    for (Method m : all_methods()) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError(fmt::format("unknown method '{}'", s));
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods{Method::naive, Method::avg_fixed, Method::merge_only, Method::pm_full,
                                             Method::pm_gauss};
    return methods;
}

ModelSpec make_model_spec(const StreamSpec& stream, const ModelConfig& model) {
    ModelSpec spec;
    spec.kind = model.kind;
    spec.input_dim = stream.input_dim;
    spec.hidden_dim = model.hidden_dim;
    spec.activation = model.activation;
    spec.num_classes = static_cast<std::size_t>(stream.total_classes());
    spec.adapter_rank = model.adapter_rank;
    spec.validate();
    return spec;
}

CoordMask mergeable_mask(const ModelSpec& spec, const StreamSpec& stream) {
    CoordMask mask = spec.adapter_mask();
    if (stream.generator != Generator::gauss_split) {
        std::vector<int> shared(static_cast<std::size_t>(stream.total_classes()));
        std::iota(shared.begin(), shared.end(), 0);
        mask = mask | spec.head_mask(shared);
    }
    return mask;
}

ParamVector pretrain_base(const ModelSpec& spec, const StreamSpec& stream, const PretrainConfig& cfg,
                          std::uint64_t seed) {
    ParamVector theta0(spec.dim());
    if (spec.kind != ModelKind::mlp2) return theta0;
    if (cfg.num_classes < 2 || cfg.samples_per_class < 1 || cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) {
        throw ConfigError("pretrain: invalid settings");
    }

    ModelSpec pspec = spec;
    pspec.num_classes = static_cast<std::size_t>(cfg.num_classes);
    pspec.class_begin = 0;
    pspec.class_end = -1;
    ParamVector theta(pspec.dim());

    auto init = rng::engine(seed, rng::Purpose::pretrain_init);
    const Site w1 = pspec.hidden_site();
    const Site w2 = pspec.head_weight_site();
    std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(w1.cols)));
    for (std::size_t j = 0; j < w1.size(); ++j) theta[w1.offset + j] = n1(init);
    std::normal_distribution<double> n2(0.0, 1.0 / std::sqrt(static_cast<double>(w2.cols)));
    for (std::size_t j = 0; j < w2.size(); ++j) theta[w2.offset + j] = n2(init);

    const Batch data = generic_mixture(spec.input_dim, cfg.num_classes, cfg.samples_per_class, stream.noise_scale,
                                       stream.radius, seed);
    AdamW opt(theta.dim(), AdamWConfig{});
    std::vector<std::size_t> order(data.size());
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto eng = rng::engine(seed, rng::Purpose::pretrain_shuffle, {static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), eng);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t len = std::min(bs, order.size() - start);
            Batch b;
            b.inputs = Matrix(len, data.inputs.cols);
            for (std::size_t i = 0; i < len; ++i) {
                const auto r = data.inputs.row(order[start + i]);
                std::copy(r.begin(), r.end(), b.inputs.row(i).begin());
                b.labels.push_back(data.labels[order[start + i]]);
            }
            const ParamVector g = grad(pspec, theta, b);
            opt.step(theta.values(), g.values(), cfg.lr);
        }
    }
    theta.require_finite("pretrain_base");

    // Keep the hidden layer, start every task head from zero.
    const std::size_t hidden_end = w1.offset + w1.size() + spec.hidden_dim;
    for (std::size_t j = 0; j < hidden_end; ++j) theta0[j] = theta[j];
    return theta0;
}

AccuracyMatrix::AccuracyMatrix(int num_tasks) {
    if (num_tasks < 1) throw ConfigError("AccuracyMatrix needs at least one task");
    rows_.resize(static_cast<std::size_t>(num_tasks));
}

void AccuracyMatrix::push_row(std::vector<double> row) {
    if (filled_ >= num_tasks()) throw DimensionError("AccuracyMatrix: all rows already filled");
    if (row.size() != static_cast<std::size_t>(filled_ + 1)) {
        throw DimensionError(fmt::format("AccuracyMatrix: row {} needs {} entries, got {}", filled_, filled_ + 1,
                                         row.size()));
    }
    for (double v : row) {
        if (!(v >= 0.0 && v <= 1.0)) throw NumericalError(fmt::format("AccuracyMatrix: entry {} outside [0, 1]", v));
    }
    rows_[static_cast<std::size_t>(filled_)] = std::move(row);
    ++filled_;
}

double AccuracyMatrix::at(int t, int i) const {
    if (t < 0 || t >= filled_ || i < 0 || i > t) {
        throw DimensionError(fmt::format("AccuracyMatrix: entry ({}, {}) undefined", t, i));
    }
    return rows_[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
}

AccuracyMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
    AccuracyMatrix m(static_cast<int>(rows.size()));
    for (const auto& r : rows) m.push_row(r);
    return m;
}

namespace {

void require_complete(const AccuracyMatrix& m, const char* what) {
    if (!m.complete()) {
        throw IncompleteRunError(fmt::format("{}: accuracy matrix has {} of {} rows", what, m.rows_filled(),
                                             m.num_tasks()));
    }
}

}  // namespace

double final_acc(const AccuracyMatrix& m) {
    require_complete(m, "final_acc");
    const auto& last = m.rows().back();
    return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

double aaa(const AccuracyMatrix& m) {
    require_complete(m, "aaa");
    double s = 0.0;
    for (const auto& row : m.rows()) s += std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
    return s / m.num_tasks();
}

double plasticity(const AccuracyMatrix& m) {
    require_complete(m, "plasticity");
    double s = 0.0;
    for (int t = 0; t < m.num_tasks(); ++t) s += m.at(t, t);
    return s / m.num_tasks();
}

double forgetting(const AccuracyMatrix& m) {
    require_complete(m, "forgetting");
    const int T = m.num_tasks();
    if (T == 1) return 0.0;
    double s = 0.0;
    for (int i = 0; i < T - 1; ++i) {
        double best = 0.0;
        for (int t = i; t < T; ++t) best = std::max(best, m.at(t, i));
        s += best - m.at(T - 1, i);
    }
    return s / (T - 1);
}

bool forgetting_defined(const AccuracyMatrix& m) { return m.num_tasks() > 1; }

PerturbConfig method_perturb(Method method, const PerturbConfig& base) {
    PerturbConfig p = base;
    switch (method) {
    case Method::naive:
    case Method::avg_fixed:
    case Method::merge_only: p.mode = PerturbMode::off; break;
    case Method::pm_full:
        if (p.mode != PerturbMode::exact3) p.mode = PerturbMode::stochastic;
        break;
    case Method::pm_gauss: p.mode = PerturbMode::gauss_control; break;
    }
    return p;
}

StreamSpec stream_for_seed(const StreamSpec& base, std::uint64_t seed) {
    StreamSpec s = base;
    s.master_seed = rng::derive(base.master_seed, {seed, static_cast<std::uint64_t>(RunKey::stream)});
    return s;
}

RunContext prepare_run(const ExperimentSetup& setup, std::uint64_t seed) {
    RunContext ctx;
    ctx.stream = stream_for_seed(setup.stream, seed);
    ctx.stream.validate();
    ctx.spec = make_model_spec(ctx.stream, setup.model);
    ctx.train = setup.train;
    ctx.train.seed = rng::derive(setup.stream.master_seed, {seed, static_cast<std::uint64_t>(RunKey::train)});
    ctx.train.validate();
    const std::uint64_t pretrain_seed =
        rng::derive(setup.stream.master_seed, {seed, static_cast<std::uint64_t>(RunKey::pretrain)});
    ctx.theta0 = pretrain_base(ctx.spec, ctx.stream, setup.pretrain, pretrain_seed);
    ctx.mergeable = mergeable_mask(ctx.spec, ctx.stream);
    return ctx;
}

RunArtifacts run_method(Method method, const ExperimentSetup& setup, std::uint64_t seed, const RunOptions& opts) {
    RunArtifacts out;
    RunReport& rep = out.report;
    rep.method = method;
    rep.seed = seed;

    RunContext ctx = prepare_run(setup, seed);
    const PerturbConfig pcfg = method_perturb(method, setup.perturb);
    pcfg.validate();
    const StreamSpec& stream = ctx.stream;
    const ModelSpec& spec = ctx.spec;
    const CoordMask& mergeable = ctx.mergeable;
    const TrainConfig& tcfg = ctx.train;
    out.theta0 = ctx.theta0;
    out.state = MergeState(out.theta0, mergeable);

    const int T = stream.num_tasks;
    rep.acc = AccuracyMatrix(T);
    std::set<int> seen;
    try {
        const std::vector<TaskDataset> tasks = generate(stream);
        for (int t = 1; t <= T; ++t) {
            const TaskDataset& task = tasks[static_cast<std::size_t>(t - 1)];
            const ModelSpec tspec = task_spec(spec, task);
            TrainResult tr = train_task(tspec, out.state.theta_hat, task, tcfg, pcfg, task.classes);
            out.train_logs.push_back(std::move(tr.log));
            const FisherDiag fisher = fisher_diag(tspec, tr.theta_star, task.train, &mergeable);

            std::optional<double> alpha = opts.force_alpha;
            if (!alpha) {
                if (method == Method::naive) alpha = 1.0;
                if (method == Method::avg_fixed) alpha = 1.0 / t;
            }
            out.state = merge(out.state, tr.theta_star, fisher, task.classes, alpha);

            seen.insert(task.classes.begin(), task.classes.end());
            const std::vector<int> seen_classes(seen.begin(), seen.end());
            std::vector<double> row;
            for (int i = 1; i <= t; ++i) {
                row.push_back(accuracy(spec, out.state.theta_hat, tasks[static_cast<std::size_t>(i - 1)].test,
                                       seen_classes));
            }
            rep.acc.push_row(std::move(row));
        }
    } catch (const Error& e) {
        rep.error = e.what();
    }
    rep.merge_log = out.state.log;
    rep.complete = rep.acc.complete();
    if (rep.complete) {
        rep.final_acc = final_acc(rep.acc);
        rep.aaa = aaa(rep.acc);
        rep.forgetting = forgetting(rep.acc);
        rep.forgetting_defined = forgetting_defined(rep.acc);
        rep.plasticity = plasticity(rep.acc);
    }
    return out;
}

double mean_task_loss(const ModelSpec& spec, const ParamVector& theta, const std::vector<TaskDataset>& tasks) {
    if (tasks.empty()) throw EmptyDataError("landscape: no tasks to evaluate");
    double s = 0.0;
    for (const auto& task : tasks) s += ce_loss(task_spec(spec, task), theta, task.test);
    return s / static_cast<double>(tasks.size());
}

double landscape_loss(const ModelSpec& spec, const ParamVector& theta_prev, const ParamVector& theta_star,
                      const std::vector<TaskDataset>& tasks, double beta, double alpha) {
    if (theta_prev.dim() != spec.dim() || theta_star.dim() != spec.dim()) {
        throw DimensionError("landscape: parameter dimension mismatch");
    }
    ParamVector theta(spec.dim());
    for (std::size_t j = 0; j < theta.dim(); ++j) theta[j] = beta * theta_prev[j] + alpha * theta_star[j];
    return mean_task_loss(spec, theta, tasks);
}

namespace {

std::vector<double> linspace(GridRange r, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) v[static_cast<std::size_t>(k)] = r.lo + (r.hi - r.lo) * k / (n - 1);
    v.back() = r.hi;
    return v;
}

}  // namespace

LandscapeGrid landscape_grid(const ModelSpec& spec, const ParamVector& theta_prev, const ParamVector& theta_star,
                             const std::vector<TaskDataset>& tasks, GridRange beta_range, GridRange alpha_range,
                             int n) {
    if (n < 2) throw ConfigError("landscape: grid size must be >= 2");
    for (double v : {beta_range.lo, beta_range.hi, alpha_range.lo, alpha_range.hi}) {
        if (!std::isfinite(v)) throw ConfigError("landscape: grid ranges must be finite");
    }
    LandscapeGrid g;
    g.betas = linspace(beta_range, n);
    g.alphas = linspace(alpha_range, n);
    g.loss.assign(g.betas.size() * g.alphas.size(), 0.0);
    parallel_for(g.betas.size(), [&](std::size_t bi) {
        for (std::size_t ai = 0; ai < g.alphas.size(); ++ai) {
            g.loss[bi * g.alphas.size() + ai] =
                landscape_loss(spec, theta_prev, theta_star, tasks, g.betas[bi], g.alphas[ai]);
        }
    });
    return g;
}

std::vector<ParamVector> replay_merges(const ParamVector& theta0, const CoordMask& mergeable,
                                       const std::vector<TaskCheckpoint>& ckpts) {
    std::vector<ParamVector> out{theta0};
    MergeState state(theta0, mergeable);
    for (std::size_t k = 0; k < ckpts.size(); ++k) {
        const auto& c = ckpts[k];
        if (c.task_id != static_cast<int>(k) + 1) {
            throw FormatError(fmt::format("checkpoint sequence broken: expected task {}, found {}", k + 1, c.task_id));
        }
        state.theta_hat = convex_merge(state, c.theta_star, c.alpha_used);
        out.push_back(state.theta_hat);
    }
    return out;
}

std::string to_string(SweepParam p) { return p == SweepParam::p0 ? "p0" : "eps"; }

SweepParam parse_sweep_param(const std::string& s) {
    if (s == "p0") return SweepParam::p0;
    if (s == "eps") return SweepParam::eps;
    throw ConfigError(fmt::format("unknown sweep parameter '{}' (expected p0 or eps)", s));
}

std::vector<SweepCell> sweep(SweepParam param, const std::vector<double>& values, const ExperimentSetup& setup,
                             const std::vector<std::uint64_t>& seeds, Method method) {
    if (values.empty()) throw ConfigError("sweep: no values given");
    if (seeds.empty()) throw ConfigError("sweep: no seeds given");
    std::vector<SweepCell> cells(values.size());
    std::vector<std::vector<std::optional<RunReport>>> results(values.size(),
                                                               std::vector<std::optional<RunReport>>(seeds.size()));
    std::vector<std::string> errors(values.size() * seeds.size());
    parallel_for(values.size() * seeds.size(), [&](std::size_t k) {
        const std::size_t vi = k / seeds.size();
        const std::size_t si = k % seeds.size();
        ExperimentSetup s = setup;
        if (param == SweepParam::p0) {
            s.perturb.p0 = values[vi];
        } else {
            s.perturb.eps = values[vi];
        }
        try {
            RunReport r = run_method(method, s, seeds[si]).report;
            if (!r.complete) errors[k] = r.error;
            results[vi][si] = std::move(r);
        } catch (const Error& e) {
            errors[k] = e.what();
        }
    });
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        cells[vi].value = values[vi];
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            if (results[vi][si]) cells[vi].reports.push_back(*results[vi][si]);
            const auto& err = errors[vi * seeds.size() + si];
            if (cells[vi].error.empty() && !err.empty()) cells[vi].error = err;
        }
    }
    return cells;
}

MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd r;
    if (xs.empty()) return r;
    r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return r;
}

nlohmann::json report_to_json(const RunReport& r) {
    nlohmann::json j;
    j["method"] = to_string(r.method);
    j["seed"] = r.seed;
    j["complete"] = r.complete;
    if (!r.error.empty()) j["error"] = r.error;
    j["acc_matrix"] = r.acc.rows();
    j["num_tasks"] = r.acc.num_tasks();
    j["final_acc"] = r.final_acc;
    j["aaa"] = r.aaa;
    j["forgetting"] = r.forgetting;
    j["forgetting_defined"] = r.forgetting_defined;
    j["forgetting_definition"] = "max_over_time_minus_final";
    j["plasticity"] = r.plasticity;
    nlohmann::json log = nlohmann::json::array();
    for (const auto& m : r.merge_log) {
        log.push_back({{"task_id", m.task_id},
                       {"alpha_raw", m.alpha_raw},
                       {"alpha_used", m.alpha_used},
                       {"denominator", m.denominator},
                       {"J_at_alpha", m.j_at_alpha},
                       {"bound_first_term", m.bound_first_term},
                       {"bound_second_term", m.bound_second_term},
                       {"degenerate", m.degenerate}});
    }
    j["merge_log"] = log;
    return j;
}

RunReport report_from_json(const nlohmann::json& j) {
    try {
        RunReport r;
        r.method = parse_method(j.at("method").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.complete = j.at("complete").get<bool>();
        if (j.contains("error")) r.error = j.at("error").get<std::string>();
        const int T = j.at("num_tasks").get<int>();
        r.acc = AccuracyMatrix(T);
        for (const auto& row : j.at("acc_matrix")) {
            if (row.empty()) break;
            r.acc.push_row(row.get<std::vector<double>>());
        }
        r.final_acc = j.at("final_acc").get<double>();
        r.aaa = j.at("aaa").get<double>();
        r.forgetting = j.at("forgetting").get<double>();
        r.forgetting_defined = j.at("forgetting_defined").get<bool>();
        r.plasticity = j.at("plasticity").get<double>();
        for (const auto& m : j.at("merge_log")) {
            MergeRecord rec;
            rec.task_id = m.at("task_id").get<int>();
            rec.alpha_raw = m.at("alpha_raw").get<double>();
            rec.alpha_used = m.at("alpha_used").get<double>();
            rec.denominator = m.at("denominator").get<double>();
            rec.j_at_alpha = m.at("J_at_alpha").get<double>();
            rec.bound_first_term = m.at("bound_first_term").get<double>();
            rec.bound_second_term = m.at("bound_second_term").get<double>();
            rec.degenerate = m.at("degenerate").get<bool>();
            r.merge_log.push_back(rec);
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("malformed report: {}", e.what()));
    }
}

std::string merge_log_csv(const std::vector<MergeRecord>& log) {
    std::string s = "task_id,alpha_raw,alpha_used,denominator,J_at_alpha,bound_first_term,bound_second_term\n";
    for (const auto& m : log) {
        s += fmt::format("{},{},{},{},{},{},{}\n", m.task_id, m.alpha_raw, m.alpha_used, m.denominator, m.j_at_alpha,
                         m.bound_first_term, m.bound_second_term);
    }
    return s;
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
    std::string s = "epoch,mean_loss,branch_minus,branch_zero,branch_plus,grad_norm\n";
    for (const auto& e : log) {
        s += fmt::format("{},{},{},{},{},{}\n", e.epoch, e.mean_loss, e.branch_counts[0], e.branch_counts[1],
                         e.branch_counts[2], e.grad_norm);
    }
    return s;
}

std::string landscape_csv(const LandscapeGrid& grid) {
    std::string s = "beta,alpha,avg_loss\n";
    for (std::size_t bi = 0; bi < grid.betas.size(); ++bi) {
        for (std::size_t ai = 0; ai < grid.alphas.size(); ++ai) {
            s += fmt::format("{},{},{}\n", grid.betas[bi], grid.alphas[ai], grid.at(bi, ai));
        }
    }
    return s;
}

std::string sweep_csv(SweepParam param, const std::vector<SweepCell>& cells) {
    std::string s = fmt::format(
        "{},runs,final_acc_mean,final_acc_std,aaa_mean,aaa_std,forgetting_mean,forgetting_std,plasticity_mean,"
        "plasticity_std,status\n",
        to_string(param));
    for (const auto& c : cells) {
        std::vector<double> fa, aa, fo, pl;
        for (const auto& r : c.reports) {
            if (!r.complete) continue;
            fa.push_back(r.final_acc);
            aa.push_back(r.aaa);
            fo.push_back(r.forgetting);
            pl.push_back(r.plasticity);
        }
        const auto a = mean_std(fa), b = mean_std(aa), f = mean_std(fo), p = mean_std(pl);
        std::string status = c.error.empty() ? "ok" : c.error;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        s += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", c.value, fa.size(), a.mean, a.std, b.mean, b.std,
                         f.mean, f.std, p.mean, p.std, status);
    }
    return s;
}

unsigned worker_threads() {
    const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PAM_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return std::min(hw, static_cast<unsigned>(v));
    }
    return hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(worker_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= n || first_error) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace pam

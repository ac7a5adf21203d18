// Command-line front end: run, landscape, sweep, verify, gen-data.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "pam/bench.hpp"
#include "pam/config.hpp"
#include "pam/errors.hpp"
#include "pam/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Carries an exit code through the command handlers.
struct Exit {
    int code;
    std::string reason;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << text;
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ExperimentConfig load(const std::string& path, const std::vector<std::string>& overrides) {
    try {
        return load_config(path, overrides);
    } catch (const Error& e) {
        throw Exit{kExitUsage, e.what()};
    }
}

fs::path run_dir(const ExperimentConfig& cfg, Method m, std::uint64_t seed) {
    return fs::path(cfg.out_dir) / fmt::format("run_{}_{}", to_string(m), seed);
}

std::string report_name(Method m, std::uint64_t seed) { return fmt::format("report_{}_{}.json", to_string(m), seed); }

// Writes the manifest; it is the only artifact carrying wall-clock data.
void write_manifest(const ExperimentConfig& cfg, const std::string& command, const std::vector<std::string>& files) {
    json m;
    m["command"] = command;
    m["created_at"] = utc_timestamp();
    m["config"] = config_to_json(cfg);
    m["artifacts"] = files;
    write_text(fs::path(cfg.out_dir) / "manifest.json", m.dump(2) + "\n");
}

void write_run_artifacts(const ExperimentConfig& cfg, const RunArtifacts& art, std::vector<std::string>& files) {
    const RunReport& r = art.report;
    const fs::path dir = run_dir(cfg, r.method, r.seed);
    ensure_dir(dir);
    const std::string rel = dir.filename().string();
    for (const auto& ckpt : art.state.history) {
        const std::string name = fmt::format("task_{}.ckpt.json", ckpt.task_id);
        save_checkpoint(ckpt, dir / name);
        files.push_back(rel + "/" + name);
    }
    for (std::size_t t = 0; t < art.train_logs.size(); ++t) {
        const std::string name = fmt::format("train_task_{}.csv", t + 1);
        write_text(dir / name, train_log_csv(art.train_logs[t]));
        files.push_back(rel + "/" + name);
    }
    write_text(dir / "merge_log.csv", merge_log_csv(r.merge_log));
    files.push_back(rel + "/merge_log.csv");
    write_text(fs::path(cfg.out_dir) / report_name(r.method, r.seed), report_to_json(r).dump(2) + "\n");
    files.push_back(report_name(r.method, r.seed));
}

std::string pm(const std::vector<double>& xs) {
    const MeanStd s = mean_std(xs);
    return fmt::format("{:.4f} ± {:.4f}", s.mean, s.std);
}

void print_summary(const std::vector<Method>& methods, const std::vector<RunReport>& reports) {
    std::cout << fmt::format("{:<11} {:>18} {:>18} {:>18} {:>18}\n", "method", "final_acc", "aaa", "forgetting",
                             "plasticity");
    for (Method m : methods) {
        std::vector<double> fa, aa, fo, pl;
        for (const auto& r : reports) {
            if (r.method != m || !r.complete) continue;
            fa.push_back(r.final_acc);
            aa.push_back(r.aaa);
            fo.push_back(r.forgetting);
            pl.push_back(r.plasticity);
        }
        if (fa.empty()) {
            std::cout << fmt::format("{:<11} {:>18}\n", to_string(m), "no complete runs");
            continue;
        }
        std::cout << fmt::format("{:<11} {:>18} {:>18} {:>18} {:>18}\n", to_string(m), pm(fa), pm(aa), pm(fo), pm(pl));
    }
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides) {
    const ExperimentConfig cfg = load(config_path, overrides);
    ensure_dir(cfg.out_dir);

    std::vector<std::pair<Method, std::uint64_t>> jobs;
    for (Method m : cfg.methods) {
        for (std::uint64_t s : cfg.seeds) jobs.emplace_back(m, s);
    }
    std::vector<std::optional<RunArtifacts>> results(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t k) { results[k] = run_method(jobs[k].first, cfg.setup, jobs[k].second); });

    std::vector<std::string> files;
    std::vector<RunReport> reports;
    std::vector<std::string> failures;
    for (const auto& art : results) {
        write_run_artifacts(cfg, *art, files);
        reports.push_back(art->report);
        if (!art->report.complete) {
            failures.push_back(fmt::format("{} seed {}: {}", to_string(art->report.method), art->report.seed,
                                           art->report.error));
        }
    }
    write_manifest(cfg, "run", files);
    print_summary(cfg.methods, reports);
    if (!failures.empty()) throw Exit{kExitFailure, fmt::format("run failed: {}", failures.front())};
    return kExitOk;
}

int cmd_landscape(const std::string& config_path, const std::vector<std::string>& overrides, int task,
                  std::optional<int> grid, std::optional<std::string> method_name, std::optional<std::uint64_t> seed_opt) {
    const ExperimentConfig cfg = load(config_path, overrides);
    const int n = grid.value_or(cfg.landscape.n);
    if (n < 2) throw Exit{kExitUsage, "--grid must be >= 2"};
    Method method;
    try {
        method = method_name ? parse_method(*method_name)
                             : (std::find(cfg.methods.begin(), cfg.methods.end(), Method::pm_full) != cfg.methods.end()
                                    ? Method::pm_full
                                    : cfg.methods.front());
    } catch (const ConfigError& e) {
        throw Exit{kExitUsage, e.what()};
    }
    const std::uint64_t seed = seed_opt.value_or(cfg.seeds.front());
    const int T = cfg.setup.stream.num_tasks;
    if (task < 1 || task > T) throw Exit{kExitFailure, fmt::format("--task {} outside 1..{}", task, T)};

    const fs::path dir = run_dir(cfg, method, seed);
    std::vector<TaskCheckpoint> ckpts;
    for (int k = 1; k <= task; ++k) {
        const fs::path p = dir / fmt::format("task_{}.ckpt.json", k);
        if (!fs::exists(p)) throw Exit{kExitFailure, fmt::format("missing checkpoint '{}'", p.string())};
        ckpts.push_back(load_checkpoint(p));
    }

    const RunContext ctx = prepare_run(cfg.setup, seed);
    const std::vector<ParamVector> hats = replay_merges(ctx.theta0, ctx.mergeable, ckpts);
    const ParamVector& prev = hats[static_cast<std::size_t>(task - 1)];
    const ParamVector& merged = hats[static_cast<std::size_t>(task)];
    const ParamVector& star = ckpts.back().theta_star;
    std::vector<TaskDataset> tasks;
    for (int k = 1; k <= task; ++k) tasks.push_back(generate_task(ctx.stream, k));

    const LandscapeGrid g = landscape_grid(ctx.spec, prev, star, tasks, cfg.landscape.beta, cfg.landscape.alpha, n);
    const fs::path csv = fs::path(cfg.out_dir) / fmt::format("landscape_t{}.csv", task);
    write_text(csv, landscape_csv(g));

    const double alpha_star = ckpts.back().alpha_used;
    const double l_prev_direct = mean_task_loss(ctx.spec, prev, tasks);
    const double l_star_direct = mean_task_loss(ctx.spec, star, tasks);
    const double l_merged_model = mean_task_loss(ctx.spec, merged, tasks);
    json markers;
    markers["task"] = task;
    markers["method"] = to_string(method);
    markers["seed"] = seed;
    markers["alpha_star"] = alpha_star;
    markers["alpha_raw"] = ckpts.back().alpha_raw;
    markers["grid_n"] = n;
    markers["markers"] = json::array({
        {{"name", "theta_hat_prev"},
         {"beta", 1.0},
         {"alpha", 0.0},
         {"loss_grid", landscape_loss(ctx.spec, prev, star, tasks, 1.0, 0.0)},
         {"loss_direct", l_prev_direct}},
        {{"name", "theta_star"},
         {"beta", 0.0},
         {"alpha", 1.0},
         {"loss_grid", landscape_loss(ctx.spec, prev, star, tasks, 0.0, 1.0)},
         {"loss_direct", l_star_direct}},
        {{"name", "merged"},
         {"beta", 1.0 - alpha_star},
         {"alpha", alpha_star},
         {"loss_grid", landscape_loss(ctx.spec, prev, star, tasks, 1.0 - alpha_star, alpha_star)},
         {"loss_direct", l_merged_model}},
    });
    markers["merged_le_max_endpoint"] = l_merged_model <= std::max(l_prev_direct, l_star_direct);
    const fs::path mpath = fs::path(cfg.out_dir) / fmt::format("landscape_t{}_markers.json", task);
    write_text(mpath, markers.dump(2) + "\n");

    std::cout << fmt::format("wrote {} ({} rows) and {}\n", csv.string(), g.loss.size(), mpath.string());
    std::cout << fmt::format("alpha* = {}, loss(theta_hat_prev) = {:.6f}, loss(theta_star) = {:.6f}, merged = {:.6f}\n",
                             alpha_star, l_prev_direct, l_star_direct, l_merged_model);
    return kExitOk;
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Exit{kExitUsage, fmt::format("bad value '{}' in --values", item)};
        }
    }
    return out;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& param_name,
              const std::string& values_csv) {
    const ExperimentConfig cfg = load(config_path, overrides);
    SweepParam param;
    try {
        param = parse_sweep_param(param_name);
    } catch (const ConfigError& e) {
        throw Exit{kExitUsage, e.what()};
    }
    const std::vector<double> values = parse_values(values_csv);
    if (values.empty()) throw Exit{kExitUsage, "--values is empty"};
    ensure_dir(cfg.out_dir);

    const std::vector<SweepCell> cells = sweep(param, values, cfg.setup, cfg.seeds);
    const std::string name = fmt::format("sweep_{}.csv", to_string(param));
    const std::string table = sweep_csv(param, cells);
    write_text(fs::path(cfg.out_dir) / name, table);
    std::cout << table;
    for (const auto& c : cells) {
        if (!c.error.empty()) throw Exit{kExitFailure, fmt::format("sweep cell {}={} failed: {}", param_name, c.value, c.error)};
    }
    return kExitOk;
}

int cmd_verify(bool full, const std::string& fault) {
    VerifyOptions opts;
    opts.full = full;
    opts.inject_fault = fault;
    std::vector<SuiteResult> results;
    try {
        results = run_verify(opts);
    } catch (const ConfigError& e) {
        throw Exit{kExitUsage, e.what()};
    }
    std::vector<std::string> failed;
    for (const auto& r : results) {
        std::cout << fmt::format("{} {:<22} {:7.2f}s  {}\n", r.passed ? "PASS" : "FAIL", r.name, r.seconds, r.detail);
        if (!r.passed) failed.push_back(r.name);
    }
    if (!failed.empty()) {
        std::string names;
        for (const auto& f : failed) names += (names.empty() ? "" : ",") + f;
        throw Exit{kExitFailure, fmt::format("verify failed: {}", names)};
    }
    return kExitOk;
}

int cmd_gen_data(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& out,
                 std::optional<std::uint64_t> seed_opt) {
    const ExperimentConfig cfg = load(config_path, overrides);
    const std::uint64_t seed = seed_opt.value_or(cfg.seeds.front());
    const fs::path dir = out.empty() ? fs::path(cfg.out_dir) / "data" : fs::path(out);
    ensure_dir(dir);
    const StreamSpec stream = stream_for_seed(cfg.setup.stream, seed);
    for (const auto& task : generate(stream)) {
        write_batch_csv(task.train, dir / fmt::format("task_{}_train.csv", task.task_id));
        write_batch_csv(task.test, dir / fmt::format("task_{}_test.csv", task.task_id));
    }
    std::cout << fmt::format("wrote {} tasks to {}\n", stream.num_tasks, dir.string());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Perturb-and-merge continual learning experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--set", overrides, "override, section.key=value (repeatable)");
    };

    auto* run = app.add_subcommand("run", "run configured methods over all seeds");
    add_config(run);

    int task = 0;
    std::optional<int> grid;
    std::optional<std::string> method;
    std::optional<std::uint64_t> seed;
    auto* land = app.add_subcommand("landscape", "loss grid over the (beta, alpha) plane of a finished run");
    add_config(land);
    land->add_option("--task", task, "task index t (1-based)")->required();
    land->add_option("--grid", grid, "points per axis");
    land->add_option("--method", method, "run to read checkpoints from (default pm_full)");
    land->add_option("--seed", seed, "replicate seed (default: first configured seed)");

    std::string param, values;
    auto* sw = app.add_subcommand("sweep", "pm_full over a list of p0 or eps values");
    add_config(sw);
    sw->add_option("--param", param, "p0 or eps")->required();
    sw->add_option("--values", values, "comma-separated values")->required();

    bool quick = false, full = false;
    std::string fault;
    auto* ver = app.add_subcommand("verify", "oracle suites");
    ver->add_flag("--quick", quick, "reduced instance counts (default)");
    ver->add_flag("--full", full, "full instance counts");
    ver->add_option("--inject-fault", fault, "corrupt a component to check the suite catches it (alpha_sign)");

    std::string out;
    auto* gen = app.add_subcommand("gen-data", "dump the task stream as CSV");
    add_config(gen);
    gen->add_option("--out", out, "output directory (default <out_dir>/data)");
    gen->add_option("--seed", seed, "replicate seed (default: first configured seed)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*run) return cmd_run(config_path, overrides);
        if (*land) return cmd_landscape(config_path, overrides, task, grid, method, seed);
        if (*sw) return cmd_sweep(config_path, overrides, param, values);
        if (*ver) {
            if (quick && full) throw Exit{kExitUsage, "--quick and --full are exclusive"};
            return cmd_verify(full, fault);
        }
        if (*gen) return cmd_gen_data(config_path, overrides, out, seed);
    } catch (const Exit& e) {
        std::cerr << "error: " << e.reason << "\n";
        return e.code;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

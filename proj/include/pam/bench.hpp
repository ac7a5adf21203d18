#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pam/merge.hpp"
#include "pam/model.hpp"
#include "pam/perturb.hpp"
#include "pam/stream.hpp"

namespace pam {

enum class Method { naive, avg_fixed, merge_only, pm_full, pm_gauss };

std::string to_string(Method m);
Method parse_method(const std::string& s);
const std::vector<Method>& all_methods();

// Architecture knobs; input size and class count come from the stream.
struct ModelConfig {
    ModelKind kind = ModelKind::mlp2;
    std::size_t hidden_dim = 32;
    Activation activation = Activation::tanh;
    std::size_t adapter_rank = 10;
};

// Supervised pretraining of the frozen base on a generic mixture that is
// disjoint from every stream task.
struct PretrainConfig {
    int num_classes = 8;
    int samples_per_class = 200;
    int epochs = 30;
    int batch_size = 32;
    double lr = 1e-2;
};

struct ExperimentSetup {
    StreamSpec stream;
    ModelConfig model;
    PretrainConfig pretrain;
    TrainConfig train;
    PerturbConfig perturb;
};

ModelSpec make_model_spec(const StreamSpec& stream, const ModelConfig& model);

// Coordinates the merge coefficient acts on: the adapter site plus head rows
// of classes that recur in more than one task.
CoordMask mergeable_mask(const ModelSpec& spec, const StreamSpec& stream);

// θ_0: pretrained hidden layer, zero head. Deterministic in `seed`.
ParamVector pretrain_base(const ModelSpec& spec, const StreamSpec& stream, const PretrainConfig& cfg,
                          std::uint64_t seed);

// Lower-triangular a[t][i], 0-based, filled one row per finished task.
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(int num_tasks);

    int num_tasks() const { return static_cast<int>(rows_.size()); }
    int rows_filled() const { return filled_; }
    bool complete() const { return filled_ == num_tasks() && num_tasks() > 0; }

    // Appends the row for the next task; its length must be rows_filled() + 1.
    void push_row(std::vector<double> row);
    double at(int t, int i) const;
    const std::vector<std::vector<double>>& rows() const { return rows_; }

    bool operator==(const AccuracyMatrix&) const = default;

private:
    std::vector<std::vector<double>> rows_;
    int filled_ = 0;
};

AccuracyMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows);

double final_acc(const AccuracyMatrix& m);
double aaa(const AccuracyMatrix& m);
double plasticity(const AccuracyMatrix& m);
// Mean over i < T of max_{t ≥ i} a[t][i] − a[T][i]; 0 for T = 1.
double forgetting(const AccuracyMatrix& m);
bool forgetting_defined(const AccuracyMatrix& m);

struct RunReport {
    Method method = Method::naive;
    std::uint64_t seed = 0;
    AccuracyMatrix acc;
    double final_acc = 0.0;
    double aaa = 0.0;
    double forgetting = 0.0;
    bool forgetting_defined = false;
    double plasticity = 0.0;
    std::vector<MergeRecord> merge_log;
    bool complete = false;
    std::string error;

    bool operator==(const RunReport&) const = default;
};

struct RunOptions {
    std::optional<double> force_alpha;
};

// Everything a run leaves behind besides the report.
struct RunArtifacts {
    RunReport report;
    ParamVector theta0;
    MergeState state;
    std::vector<std::vector<EpochLog>> train_logs;
};

// Deterministic per-replicate inputs of a run: the seeded stream, the model
// layout, θ_0 and the training seed.
struct RunContext {
    StreamSpec stream;
    ModelSpec spec;
    ParamVector theta0;
    CoordMask mergeable;
    TrainConfig train;
};
RunContext prepare_run(const ExperimentSetup& setup, std::uint64_t seed);

// Training window of one task: softmax over every class seen up to it.
ModelSpec task_spec(const ModelSpec& spec, const TaskDataset& task);

// Perturbation settings a method actually trains with.
PerturbConfig method_perturb(Method method, const PerturbConfig& base);

// Runs the whole stream. Training and merge errors are caught: the returned
// report is then marked incomplete and carries the message.
RunArtifacts run_method(Method method, const ExperimentSetup& setup, std::uint64_t seed,
                        const RunOptions& opts = {});

// The stream a given replicate seed sees.
StreamSpec stream_for_seed(const StreamSpec& base, std::uint64_t seed);

struct LandscapeGrid {
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> loss;  // row-major: loss[bi * alphas.size() + ai]

    double at(std::size_t bi, std::size_t ai) const { return loss[bi * alphas.size() + ai]; }
};

struct GridRange {
    double lo = -0.25;
    double hi = 1.25;
};

// Mean over `tasks` (each with its own class window) of the loss at
// β·θ_prev + α·θ_star.
double landscape_loss(const ModelSpec& spec, const ParamVector& theta_prev, const ParamVector& theta_star,
                      const std::vector<TaskDataset>& tasks, double beta, double alpha);
double mean_task_loss(const ModelSpec& spec, const ParamVector& theta, const std::vector<TaskDataset>& tasks);

LandscapeGrid landscape_grid(const ModelSpec& spec, const ParamVector& theta_prev, const ParamVector& theta_star,
                             const std::vector<TaskDataset>& tasks, GridRange beta_range, GridRange alpha_range,
                             int n);

// Rebuilds θ̂_0..θ̂_T from θ_0 and stored checkpoints using their logged α.
std::vector<ParamVector> replay_merges(const ParamVector& theta0, const CoordMask& mergeable,
                                       const std::vector<TaskCheckpoint>& ckpts);

enum class SweepParam { p0, eps };
std::string to_string(SweepParam p);
SweepParam parse_sweep_param(const std::string& s);

struct SweepCell {
    double value = 0.0;
    std::vector<RunReport> reports;  // one per seed
    std::string error;               // first failure, empty if every seed finished
};

// One pm_full run per (value, seed). Failing cells are recorded and the
// sweep continues.
std::vector<SweepCell> sweep(SweepParam param, const std::vector<double>& values, const ExperimentSetup& setup,
                             const std::vector<std::uint64_t>& seeds, Method method = Method::pm_full);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};
MeanStd mean_std(const std::vector<double>& xs);

// Serialization. Doubles are written in shortest round-trip form.
nlohmann::json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);
std::string merge_log_csv(const std::vector<MergeRecord>& log);
std::string train_log_csv(const std::vector<EpochLog>& log);
std::string landscape_csv(const LandscapeGrid& grid);
std::string sweep_csv(SweepParam param, const std::vector<SweepCell>& cells);

// Worker count from PAM_THREADS, capped by the hardware.
unsigned worker_threads();
// Runs fn(0..n-1) on up to worker_threads() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pam

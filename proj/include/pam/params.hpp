#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pam {

// Dense row-major matrix. Only what the adapters and data batches need.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

// Flat coordinate vector over the whole mergeable parameter space. Every
// model, task optimum and merged model of one experiment shares one layout.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::size_t dim, double fill = 0.0);
    explicit ParamVector(std::vector<double> values);
    ParamVector(std::initializer_list<double> values);

    std::size_t dim() const { return values_.size(); }

    double operator[](std::size_t j) const { return values_[j]; }
    double& operator[](std::size_t j) { return values_[j]; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    const std::vector<double>& raw() const { return values_; }

    bool all_finite() const;
    // Throws NumericalError naming `what` if any entry is NaN/Inf.
    void require_finite(const char* what) const;

    bool operator==(const ParamVector&) const = default;

private:
    std::vector<double> values_;
};

// Boolean selector over ParamVector coordinates.
class CoordMask {
public:
    CoordMask() = default;
    explicit CoordMask(std::size_t dim, bool value = false) : bits_(dim, value ? 1 : 0) {}

    static CoordMask all(std::size_t dim) { return CoordMask(dim, true); }

    std::size_t dim() const { return bits_.size(); }
    bool empty() const { return bits_.empty(); }
    bool operator[](std::size_t j) const { return bits_[j] != 0; }
    void set(std::size_t j, bool v = true) { bits_[j] = v ? 1 : 0; }
    void set_range(std::size_t begin, std::size_t count, bool v = true);
    std::size_t count() const;
    std::vector<std::size_t> indices() const;

    CoordMask operator|(const CoordMask& other) const;
    bool operator==(const CoordMask&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

// A contiguous row-major weight block inside the flat coordinate space.
struct Site {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
    bool operator==(const Site&) const = default;
};

// Low-rank update a·b for one weight block: a is rows×rank, b is rank×cols.
struct LowRankAdapter {
    Site site;
    std::size_t rank = 0;
    Matrix a;
    Matrix b;

    LowRankAdapter() = default;
    LowRankAdapter(Site s, std::size_t r);

    // Checks rank ≤ min(rows, cols) and factor shapes against the site.
    void validate() const;
};

// result = base + scale·delta
ParamVector axpy(const ParamVector& base, double scale, const ParamVector& delta);
// result = lhs − rhs
ParamVector subtract(const ParamVector& lhs, const ParamVector& rhs);
double dot(const ParamVector& u, const ParamVector& v);
double norm(const ParamVector& v);

// Flattened a·b placed at the adapter's site inside a zero vector of `dim`.
ParamVector materialize(const LowRankAdapter& adapter, std::size_t dim);
// Accumulates scale·(a·b) into the site block of `target` in place.
void add_materialized(const LowRankAdapter& adapter, double scale, ParamVector& target);

class FisherDiag;

// Per-task record persisted when a task finishes.
struct TaskCheckpoint {
    int task_id = 0;
    ParamVector theta_star;
    std::vector<double> fisher;
    std::size_t fisher_samples = 0;
    std::vector<int> classes;
    double alpha_raw = 1.0;
    double alpha_used = 1.0;

    bool operator==(const TaskCheckpoint&) const = default;
};

TaskCheckpoint make_checkpoint(int task_id, ParamVector theta_star, const FisherDiag& fisher,
                               std::vector<int> classes, double alpha_raw);

double clamp_alpha(double alpha_raw);

void save_checkpoint(const TaskCheckpoint& ckpt, const std::filesystem::path& path);
TaskCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pam

#include "pam/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "pam/errors.hpp"
#include "pam/rng.hpp"

namespace pam {

std::string to_string(Generator g) {
    switch (g) {
    case Generator::gauss_split: return "gauss_split";
    case Generator::rot_moons: return "rot_moons";
    case Generator::perm_features: return "perm_features";
    }
    return "gauss_split";
}

Generator parse_generator(const std::string& s) {
    if (s == "gauss_split") return Generator::gauss_split;
    if (s == "rot_moons") return Generator::rot_moons;
    if (s == "perm_features") return Generator::perm_features;
    throw ConfigError(fmt::format("unknown stream generator '{}'", s));
}

void StreamSpec::validate() const {
    if (num_tasks < 2) throw ConfigError("stream: num_tasks must be >= 2");
    if (classes_per_task < 1 || samples_per_class < 1 || test_samples_per_class < 1) {
        throw ConfigError("stream: class and sample counts must be positive");
    }
    if (samples_per_class < 20 || test_samples_per_class < 20) {
        throw ConfigError("stream: need at least 20 samples per class in each split");
    }
    if (input_dim < 2) throw ConfigError("stream: input_dim must be >= 2");
    if (!(noise_scale > 0.0) || !(radius > 0.0)) throw ConfigError("stream: noise_scale and radius must be > 0");
    if (generator == Generator::rot_moons && classes_per_task != 2) {
        throw ConfigError("stream: rot_moons has exactly 2 classes per task");
    }
}

int StreamSpec::total_classes() const {
    return generator == Generator::gauss_split ? num_tasks * classes_per_task : classes_per_task;
}

double StreamSpec::rotation_step_radians() const {
    const double deg = rotation_step_deg > 0.0 ? rotation_step_deg : 180.0 / num_tasks;
    return deg * std::numbers::pi / 180.0;
}

namespace {

using Engine = std::mt19937_64;

std::vector<double> gaussian_vector(Engine& eng, std::size_t n) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(eng);
    return v;
}

void normalize(std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    for (auto& x : v) x /= s;
}

// Orthonormal pair spanning the plane of the gauss_split circle.
std::pair<std::vector<double>, std::vector<double>> circle_plane(const StreamSpec& spec) {
    auto eng = rng::engine(spec.master_seed, rng::Purpose::class_layout, {0});
    auto u = gaussian_vector(eng, spec.input_dim);
    normalize(u);
    auto v = gaussian_vector(eng, spec.input_dim);
    double proj = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) proj += u[k] * v[k];
    for (std::size_t k = 0; k < u.size(); ++k) v[k] -= proj * u[k];
    normalize(v);
    return {u, v};
}

// Class means on a circle of `radius`; class slots are a seeded permutation.
std::vector<std::vector<double>> circle_means(const StreamSpec& spec) {
    const int K = spec.total_classes();
    auto [u, v] = circle_plane(spec);
    auto eng = rng::engine(spec.master_seed, rng::Purpose::class_layout, {1});
    std::vector<int> slot(static_cast<std::size_t>(K));
    std::iota(slot.begin(), slot.end(), 0);
    std::shuffle(slot.begin(), slot.end(), eng);

    std::vector<std::vector<double>> means(static_cast<std::size_t>(K), std::vector<double>(spec.input_dim));
    for (int c = 0; c < K; ++c) {
        const double phi = 2.0 * std::numbers::pi * slot[static_cast<std::size_t>(c)] / K;
        for (std::size_t k = 0; k < spec.input_dim; ++k) {
            means[static_cast<std::size_t>(c)][k] = spec.radius * (std::cos(phi) * u[k] + std::sin(phi) * v[k]);
        }
    }
    return means;
}

Batch sample_mixture(const std::vector<std::vector<double>>& means, const std::vector<int>& classes,
                     std::size_t dim, int per_class, double noise, Engine& eng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Batch b;
    b.inputs = Matrix(classes.size() * static_cast<std::size_t>(per_class), dim);
    std::size_t row = 0;
    for (int c : classes) {
        const auto& mu = means[static_cast<std::size_t>(c)];
        for (int n = 0; n < per_class; ++n, ++row) {
            for (std::size_t k = 0; k < dim; ++k) b.inputs(row, k) = mu[k] + noise * nd(eng);
            b.labels.push_back(c);
        }
    }
    return b;
}

Batch sample_moons(const StreamSpec& spec, int per_class, Engine& eng) {
    std::uniform_real_distribution<double> ud(0.0, std::numbers::pi);
    std::normal_distribution<double> nd(0.0, 1.0);
    Batch b;
    b.inputs = Matrix(2 * static_cast<std::size_t>(per_class), spec.input_dim);
    std::size_t row = 0;
    for (int c = 0; c < 2; ++c) {
        for (int n = 0; n < per_class; ++n, ++row) {
            const double t = ud(eng);
            // Centered two-moons in the first two coordinates.
            const double x = c == 0 ? std::cos(t) - 0.5 : 1.0 - std::cos(t) - 0.5;
            const double y = c == 0 ? std::sin(t) - 0.25 : 0.25 - std::sin(t);
            b.inputs(row, 0) = x + spec.noise_scale * nd(eng);
            b.inputs(row, 1) = y + spec.noise_scale * nd(eng);
            for (std::size_t k = 2; k < spec.input_dim; ++k) b.inputs(row, k) = spec.noise_scale * nd(eng);
            b.labels.push_back(c);
        }
    }
    return b;
}

Batch rotate_first_plane(Batch b, double angle) {
    const double cs = std::cos(angle);
    const double sn = std::sin(angle);
    for (std::size_t n = 0; n < b.inputs.rows; ++n) {
        const double x = b.inputs(n, 0);
        const double y = b.inputs(n, 1);
        b.inputs(n, 0) = cs * x - sn * y;
        b.inputs(n, 1) = sn * x + cs * y;
    }
    return b;
}

Batch permute_features(Batch b, const std::vector<std::size_t>& perm) {
    std::vector<double> tmp(b.inputs.cols);
    for (std::size_t n = 0; n < b.inputs.rows; ++n) {
        auto row = b.inputs.row(n);
        for (std::size_t k = 0; k < perm.size(); ++k) tmp[k] = row[perm[k]];
        std::copy(tmp.begin(), tmp.end(), row.begin());
    }
    return b;
}

// Means for the shared perm_features mixture: random directions at `radius`.
std::vector<std::vector<double>> sphere_means(std::size_t dim, int K, double radius, std::uint64_t seed) {
    auto eng = rng::engine(seed, rng::Purpose::class_layout, {2});
    std::vector<std::vector<double>> means;
    for (int c = 0; c < K; ++c) {
        auto v = gaussian_vector(eng, dim);
        normalize(v);
        for (auto& x : v) x *= radius;
        means.push_back(std::move(v));
    }
    return means;
}

}  // namespace

MoonsBase moons_base(const StreamSpec& spec) {
    auto train_eng = rng::engine(spec.master_seed, rng::Purpose::train_samples, {0});
    auto test_eng = rng::engine(spec.master_seed, rng::Purpose::test_samples, {0});
    return {sample_moons(spec, spec.samples_per_class, train_eng),
            sample_moons(spec, spec.test_samples_per_class, test_eng)};
}

TaskDataset generate_task(const StreamSpec& spec, int task_id) {
    spec.validate();
    if (task_id < 1 || task_id > spec.num_tasks) {
        throw ConfigError(fmt::format("task {} outside 1..{}", task_id, spec.num_tasks));
    }
    const auto t = static_cast<std::uint64_t>(task_id);
    TaskDataset task;
    task.task_id = task_id;
    task.seed = rng::derive(spec.master_seed, {t});

    switch (spec.generator) {
    case Generator::gauss_split: {
        const auto means = circle_means(spec);
        for (int j = 0; j < spec.classes_per_task; ++j) task.classes.push_back((task_id - 1) * spec.classes_per_task + j);
        auto train_eng = rng::engine(spec.master_seed, rng::Purpose::train_samples, {t});
        auto test_eng = rng::engine(spec.master_seed, rng::Purpose::test_samples, {t});
        task.train = sample_mixture(means, task.classes, spec.input_dim, spec.samples_per_class, spec.noise_scale,
                                    train_eng);
        task.test = sample_mixture(means, task.classes, spec.input_dim, spec.test_samples_per_class,
                                   spec.noise_scale, test_eng);
        break;
    }
    case Generator::rot_moons: {
        task.classes = {0, 1};
        auto base = moons_base(spec);
        const double angle = (task_id - 1) * spec.rotation_step_radians();
        task.train = rotate_first_plane(std::move(base.train), angle);
        task.test = rotate_first_plane(std::move(base.test), angle);
        break;
    }
    case Generator::perm_features: {
        for (int j = 0; j < spec.classes_per_task; ++j) task.classes.push_back(j);
        const auto means = sphere_means(spec.input_dim, spec.classes_per_task, spec.radius, spec.master_seed);
        auto train_eng = rng::engine(spec.master_seed, rng::Purpose::train_samples, {0});
        auto test_eng = rng::engine(spec.master_seed, rng::Purpose::test_samples, {0});
        std::vector<std::size_t> perm(spec.input_dim);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        if (task_id > 1) {
            auto perm_eng = rng::engine(spec.master_seed, rng::Purpose::feature_permutation, {t});
            std::shuffle(perm.begin(), perm.end(), perm_eng);
        }
        task.train = permute_features(
            sample_mixture(means, task.classes, spec.input_dim, spec.samples_per_class, spec.noise_scale, train_eng),
            perm);
        task.test = permute_features(sample_mixture(means, task.classes, spec.input_dim,
                                                    spec.test_samples_per_class, spec.noise_scale, test_eng),
                                     perm);
        break;
    }
    }
    return task;
}

std::vector<TaskDataset> generate(const StreamSpec& spec) {
    spec.validate();
    std::vector<TaskDataset> out;
    out.reserve(static_cast<std::size_t>(spec.num_tasks));
    for (int t = 1; t <= spec.num_tasks; ++t) out.push_back(generate_task(spec, t));
    return out;
}

Batch generic_mixture(std::size_t input_dim, int num_classes, int samples_per_class, double noise_scale,
                      double radius, std::uint64_t seed) {
    const auto means = sphere_means(input_dim, num_classes, radius, seed);
    std::vector<int> classes(static_cast<std::size_t>(num_classes));
    std::iota(classes.begin(), classes.end(), 0);
    auto eng = rng::engine(seed, rng::Purpose::pretrain_data);
    return sample_mixture(means, classes, input_dim, samples_per_class, noise_scale, eng);
}

void write_batch_csv(const Batch& batch, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    for (std::size_t k = 0; k < batch.inputs.cols; ++k) out << 'x' << k << ',';
    out << "label\n";
    for (std::size_t n = 0; n < batch.size(); ++n) {
        for (double v : batch.inputs.row(n)) out << fmt::format("{},", v);
        out << batch.labels[n] << '\n';
    }
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

Batch read_batch_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
    std::string line;
    if (!std::getline(in, line)) throw FormatError(fmt::format("'{}': missing header", path.string()));
    const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (cols == 0) throw FormatError(fmt::format("'{}': header has no feature columns", path.string()));

    std::vector<double> values;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t k = 0;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            if (k < cols) {
                const double v = std::strtod(cell.c_str(), &end);
                if (end == cell.c_str()) throw FormatError(fmt::format("'{}': bad number '{}'", path.string(), cell));
                values.push_back(v);
            } else {
                const long v = std::strtol(cell.c_str(), &end, 10);
                if (end == cell.c_str()) throw FormatError(fmt::format("'{}': bad label '{}'", path.string(), cell));
                labels.push_back(static_cast<int>(v));
            }
            ++k;
        }
        if (k != cols + 1) throw FormatError(fmt::format("'{}': row with {} cells, expected {}", path.string(), k, cols + 1));
    }
    Batch b;
    b.inputs = Matrix(labels.size(), cols);
    b.inputs.data = std::move(values);
    b.labels = std::move(labels);
    return b;
}

}  // namespace pam

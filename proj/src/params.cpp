#include "pam/params.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "pam/errors.hpp"
#include "pam/fisher_diag.hpp"

namespace pam {

namespace {

void require_same_dim(const ParamVector& a, const ParamVector& b, const char* op) {
    if (a.dim() != b.dim()) {
        throw DimensionError(fmt::format("{}: dimension mismatch ({} vs {})", op, a.dim(), b.dim()));
    }
}

}  // namespace

ParamVector::ParamVector(std::size_t dim, double fill) : values_(dim, fill) {}

ParamVector::ParamVector(std::vector<double> values) : values_(std::move(values)) {}

ParamVector::ParamVector(std::initializer_list<double> values) : values_(values) {}

bool ParamVector::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void ParamVector::require_finite(const char* what) const {
    if (!all_finite()) {
        throw NumericalError(fmt::format("{}: non-finite parameter value", what));
    }
}

void CoordMask::set_range(std::size_t begin, std::size_t count, bool v) {
    if (begin + count > bits_.size()) {
        throw DimensionError("CoordMask::set_range out of bounds");
    }
    std::fill_n(bits_.begin() + static_cast<std::ptrdiff_t>(begin), count, v ? 1 : 0);
}

std::size_t CoordMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<std::size_t> CoordMask::indices() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < bits_.size(); ++j) {
        if (bits_[j]) out.push_back(j);
    }
    return out;
}

CoordMask CoordMask::operator|(const CoordMask& other) const {
    if (dim() != other.dim()) throw DimensionError("CoordMask union: dimension mismatch");
    CoordMask out(dim());
    for (std::size_t j = 0; j < dim(); ++j) out.bits_[j] = bits_[j] | other.bits_[j];
    return out;
}

LowRankAdapter::LowRankAdapter(Site s, std::size_t r)
    : site(std::move(s)), rank(r), a(site.rows, r), b(r, site.cols) {}

void LowRankAdapter::validate() const {
    if (rank == 0 || rank > std::min(site.rows, site.cols)) {
        throw DimensionError(fmt::format("adapter '{}': rank {} outside [1, min({}, {})]", site.name, rank,
                                         site.rows, site.cols));
    }
    if (a.rows != site.rows || a.cols != rank || b.rows != rank || b.cols != site.cols) {
        throw DimensionError(fmt::format("adapter '{}': factor shapes {}x{} · {}x{} do not match site {}x{}",
                                         site.name, a.rows, a.cols, b.rows, b.cols, site.rows, site.cols));
    }
}

ParamVector axpy(const ParamVector& base, double scale, const ParamVector& delta) {
    require_same_dim(base, delta, "axpy");
    ParamVector out(base.dim());
    for (std::size_t j = 0; j < base.dim(); ++j) out[j] = base[j] + scale * delta[j];
    return out;
}

ParamVector subtract(const ParamVector& lhs, const ParamVector& rhs) {
    require_same_dim(lhs, rhs, "subtract");
    ParamVector out(lhs.dim());
    for (std::size_t j = 0; j < lhs.dim(); ++j) out[j] = lhs[j] - rhs[j];
    return out;
}

double dot(const ParamVector& u, const ParamVector& v) {
    require_same_dim(u, v, "dot");
    double s = 0.0;
    for (std::size_t j = 0; j < u.dim(); ++j) s += u[j] * v[j];
    return s;
}

double norm(const ParamVector& v) { return std::sqrt(dot(v, v)); }

void add_materialized(const LowRankAdapter& adapter, double scale, ParamVector& target) {
    adapter.validate();
    const Site& s = adapter.site;
    if (s.offset + s.size() > target.dim()) {
        throw DimensionError(fmt::format("adapter '{}': site [{}, {}) exceeds dim {}", s.name, s.offset,
                                         s.offset + s.size(), target.dim()));
    }
    // Rank-by-rank outer products, row by row.
    for (std::size_t i = 0; i < s.rows; ++i) {
        double* out_row = target.values().data() + s.offset + i * s.cols;
        for (std::size_t r = 0; r < adapter.rank; ++r) {
            const double air = scale * adapter.a(i, r);
            if (air == 0.0) continue;
            const auto brow = adapter.b.row(r);
            for (std::size_t j = 0; j < s.cols; ++j) out_row[j] += air * brow[j];
        }
    }
}

ParamVector materialize(const LowRankAdapter& adapter, std::size_t dim) {
    ParamVector out(dim);
    add_materialized(adapter, 1.0, out);
    return out;
}

double clamp_alpha(double alpha_raw) { return std::clamp(alpha_raw, 0.0, 1.0); }

TaskCheckpoint make_checkpoint(int task_id, ParamVector theta_star, const FisherDiag& fisher,
                               std::vector<int> classes, double alpha_raw) {
    if (theta_star.dim() != fisher.dim()) {
        throw DimensionError(
            fmt::format("checkpoint: theta_star dim {} != fisher dim {}", theta_star.dim(), fisher.dim()));
    }
    TaskCheckpoint c;
    c.task_id = task_id;
    c.theta_star = std::move(theta_star);
    c.fisher = fisher.raw();
    c.fisher_samples = fisher.n_samples();
    c.classes = std::move(classes);
    c.alpha_raw = alpha_raw;
    c.alpha_used = clamp_alpha(alpha_raw);
    return c;
}

void save_checkpoint(const TaskCheckpoint& ckpt, const std::filesystem::path& path) {
    nlohmann::json j;
    j["task_id"] = ckpt.task_id;
    j["dim"] = ckpt.theta_star.dim();
    j["theta_star"] = ckpt.theta_star.raw();
    j["fisher"] = ckpt.fisher;
    j["fisher_samples"] = ckpt.fisher_samples;
    j["classes"] = ckpt.classes;
    j["alpha_raw"] = ckpt.alpha_raw;
    j["alpha_used"] = ckpt.alpha_used;

    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << j.dump(1) << '\n';
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

TaskCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("'{}': not a checkpoint: {}", path.string(), e.what()));
    }

    TaskCheckpoint c;
    try {
        c.task_id = j.at("task_id").get<int>();
        const auto dim = j.at("dim").get<std::size_t>();
        c.theta_star = ParamVector(j.at("theta_star").get<std::vector<double>>());
        c.fisher = j.at("fisher").get<std::vector<double>>();
        c.fisher_samples = j.value("fisher_samples", std::size_t{1});
        c.classes = j.at("classes").get<std::vector<int>>();
        c.alpha_raw = j.at("alpha_raw").get<double>();
        c.alpha_used = j.at("alpha_used").get<double>();
        if (c.theta_star.dim() != dim || c.fisher.size() != dim) {
            throw FormatError(fmt::format("'{}': array lengths disagree with dim {}", path.string(), dim));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("'{}': malformed checkpoint: {}", path.string(), e.what()));
    }

    if (c.task_id < 1) throw FormatError(fmt::format("'{}': task_id must be >= 1", path.string()));
    if (!c.theta_star.all_finite()) throw FormatError(fmt::format("'{}': non-finite theta_star", path.string()));
    for (double f : c.fisher) {
        if (!(f >= 0.0) || !std::isfinite(f)) {
            throw FormatError(fmt::format("'{}': fisher entries must be finite and >= 0", path.string()));
        }
    }
    if (c.alpha_used != clamp_alpha(c.alpha_raw)) {
        throw FormatError(fmt::format("'{}': alpha_used {} is not clamp(alpha_raw={}, 0, 1)", path.string(),
                                      c.alpha_used, c.alpha_raw));
    }
    return c;
}

}  // namespace pam

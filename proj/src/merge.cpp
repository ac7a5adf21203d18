#include "pam/merge.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include <fmt/format.h>

#include "pam/errors.hpp"

namespace pam {

namespace {

constexpr double kDegenerateDenominator = 1e-12;

// Sums of the three quadratic pieces of J over tasks 1..t.
struct Terms {
    double constant = 0.0;  // Σ e_iᵀF_ie_i
    double cross = 0.0;     // Σ e_iᵀF_iΔ
    double curvature = 0.0; // Σ ΔᵀF_iΔ
};

void check_inputs(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t) {
    const std::size_t dim = state.theta_hat.dim();
    if (theta_star_t.dim() != dim || fisher_t.dim() != dim) {
        throw DimensionError(fmt::format("merge: theta_hat dim {}, theta_star dim {}, fisher dim {}", dim,
                                         theta_star_t.dim(), fisher_t.dim()));
    }
    if (!state.mergeable.empty() && state.mergeable.dim() != dim) {
        throw DimensionError("merge: mergeable mask dimension mismatch");
    }
    for (const auto& c : state.history) {
        if (c.theta_star.dim() != dim || c.fisher.size() != dim) {
            throw DimensionError(fmt::format("merge: checkpoint for task {} has mismatched dimension", c.task_id));
        }
    }
}

// The α = 0 merge point: θ̂_{t−1} on mergeable coordinates, θ_t* elsewhere.
ParamVector merge_origin(const MergeState& state, const ParamVector& theta_star_t) {
    ParamVector origin = theta_star_t;
    for (std::size_t j = 0; j < origin.dim(); ++j) {
        if (state.is_mergeable(j)) origin[j] = state.theta_hat[j];
    }
    return origin;
}

Terms collect_terms(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t) {
    check_inputs(state, theta_star_t, fisher_t);
    const ParamVector delta = task_vector(state, theta_star_t);
    const ParamVector origin = merge_origin(state, theta_star_t);
    Terms terms;
    auto add = [&](const FisherDiag& f, const ParamVector& optimum) {
        const ParamVector e = subtract(origin, optimum);
        terms.constant += quad_form(f, e);
        terms.cross += cross_form(f, e, delta);
        terms.curvature += quad_form(f, delta);
    };
    for (const auto& ckpt : state.history) add(fisher_of(ckpt), ckpt.theta_star);
    add(fisher_t, theta_star_t);
    return terms;
}

}  // namespace

MergeState::MergeState(ParamVector theta0, CoordMask mergeable_coords)
    : theta_hat(std::move(theta0)), mergeable(std::move(mergeable_coords)) {
    if (!mergeable.empty() && mergeable.dim() != theta_hat.dim()) {
        throw DimensionError("MergeState: mergeable mask dimension mismatch");
    }
}

FisherDiag fisher_of(const TaskCheckpoint& ckpt) {
    return FisherDiag(ckpt.fisher, std::max<std::size_t>(ckpt.fisher_samples, 1));
}

ParamVector task_vector(const MergeState& state, const ParamVector& theta_star_t) {
    ParamVector delta = subtract(theta_star_t, state.theta_hat);
    for (std::size_t j = 0; j < delta.dim(); ++j) {
        if (!state.is_mergeable(j)) delta[j] = 0.0;
    }
    return delta;
}

AlphaResult optimal_alpha(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t) {
    const Terms terms = collect_terms(state, theta_star_t, fisher_t);
    if (!(terms.curvature >= kDegenerateDenominator)) {
        throw DegenerateTaskVector(
            fmt::format("task {}: task-vector curvature {} below {}", state.t + 1, terms.curvature,
                        kDegenerateDenominator));
    }
    AlphaResult r;
    r.numerator = terms.cross;
    r.denominator = terms.curvature;
    r.raw = -terms.cross / terms.curvature;
    r.used = clamp_alpha(r.raw);
    return r;
}

double objective_J(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t,
                   double alpha) {
    const Terms terms = collect_terms(state, theta_star_t, fisher_t);
    return 0.5 * (terms.constant + 2.0 * alpha * terms.cross + alpha * alpha * terms.curvature);
}

BoundCheck bound_check(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t) {
    const Terms terms = collect_terms(state, theta_star_t, fisher_t);
    BoundCheck b;
    b.first_term = 0.5 * terms.constant;
    b.second_term = terms.curvature > 0.0 ? terms.cross * terms.cross / (2.0 * terms.curvature) : 0.0;
    b.holds = b.second_term <= b.first_term + 1e-9;
    return b;
}

double delta_estimate(const TaskCheckpoint& ckpt_i, const ParamVector& theta_hat_t) {
    return 0.5 * quad_form(fisher_of(ckpt_i), subtract(theta_hat_t, ckpt_i.theta_star));
}

ParamVector convex_merge(const MergeState& state, const ParamVector& theta_star_t, double alpha) {
    if (theta_star_t.dim() != state.theta_hat.dim()) throw DimensionError("convex_merge: dimension mismatch");
    ParamVector out = theta_star_t;
    for (std::size_t j = 0; j < out.dim(); ++j) {
        if (!state.is_mergeable(j)) continue;
        const double prev = state.theta_hat[j];
        const double next = theta_star_t[j];
        const double v = (1.0 - alpha) * prev + alpha * next;
        // Rounding must not leave the segment between the endpoints.
        out[j] = std::clamp(v, std::min(prev, next), std::max(prev, next));
    }
    return out;
}

MergeState merge(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t,
                 std::vector<int> classes, std::optional<double> alpha_override) {
    check_inputs(state, theta_star_t, fisher_t);
    const int task_id = state.t + 1;

    MergeRecord rec;
    rec.task_id = task_id;
    const Terms terms = collect_terms(state, theta_star_t, fisher_t);
    rec.denominator = terms.curvature;
    if (alpha_override) {
        rec.alpha_raw = *alpha_override;
    } else {
        try {
            rec.alpha_raw = optimal_alpha(state, theta_star_t, fisher_t).raw;
        } catch (const DegenerateTaskVector& e) {
            std::cerr << "warning: " << e.what() << "; merging with alpha = 1\n";
            rec.alpha_raw = 1.0;
            rec.degenerate = true;
        }
    }
    rec.alpha_used = clamp_alpha(rec.alpha_raw);
    rec.j_at_alpha = 0.5 * (terms.constant + 2.0 * rec.alpha_used * terms.cross +
                            rec.alpha_used * rec.alpha_used * terms.curvature);
    const BoundCheck bound = bound_check(state, theta_star_t, fisher_t);
    rec.bound_first_term = bound.first_term;
    rec.bound_second_term = bound.second_term;

    MergeState next;
    next.mergeable = state.mergeable;
    next.theta_hat = convex_merge(state, theta_star_t, rec.alpha_used);
    next.history = state.history;
    next.history.push_back(make_checkpoint(task_id, theta_star_t, fisher_t, std::move(classes), rec.alpha_raw));
    next.t = task_id;
    next.log = state.log;
    next.log.push_back(rec);
    return next;
}

}  // namespace pam

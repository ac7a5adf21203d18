#pragma once

#include <optional>
#include <vector>

#include "pam/fisher.hpp"
#include "pam/params.hpp"

namespace pam {

// One row of the merge log.
struct MergeRecord {
    int task_id = 0;
    double alpha_raw = 1.0;
    double alpha_used = 1.0;
    double denominator = 0.0;
    double j_at_alpha = 0.0;
    double bound_first_term = 0.0;
    double bound_second_term = 0.0;
    bool degenerate = false;

    bool operator==(const MergeRecord&) const = default;
};

// Inference parameters after t tasks plus every stored task record.
//
// `mergeable` selects the coordinates the merge coefficient scales; all
// other coordinates of a new task optimum are taken verbatim. An empty mask
// means every coordinate is mergeable.
struct MergeState {
    ParamVector theta_hat;
    std::vector<TaskCheckpoint> history;
    int t = 0;
    CoordMask mergeable;
    std::vector<MergeRecord> log;

    MergeState() = default;
    MergeState(ParamVector theta0, CoordMask mergeable_coords = {});

    bool is_mergeable(std::size_t j) const { return mergeable.empty() || mergeable[j]; }
};

struct AlphaResult {
    double raw = 1.0;
    double used = 1.0;
    double numerator = 0.0;    // Σ_i e_iᵀ F_i Δ
    double denominator = 0.0;  // Σ_i Δᵀ F_i Δ
};

struct BoundCheck {
    double first_term = 0.0;   // ½ Σ_i e_iᵀ F_i e_i
    double second_term = 0.0;  // (Σ_i e_iᵀ F_i Δ)² / (2 Σ_i Δᵀ F_i Δ)
    bool holds = true;
};

// Task vector Δ = θ_t* − θ̂_{t−1} on mergeable coordinates, zero elsewhere.
ParamVector task_vector(const MergeState& state, const ParamVector& theta_star_t);

// Closed-form minimizer of J(α); throws DegenerateTaskVector when the
// denominator is below 1e-12.
AlphaResult optimal_alpha(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t);

// J(α) = Σ_i ½[e_iᵀF_ie_i + 2α e_iᵀF_iΔ + α² ΔᵀF_iΔ], the i = t term using (θ_t*, F_t).
double objective_J(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t,
                   double alpha);

BoundCheck bound_check(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t);

// ½ F_i-weighted squared distance between θ̂_t and θ_i*.
double delta_estimate(const TaskCheckpoint& ckpt_i, const ParamVector& theta_hat_t);

// (1−α)·θ̂ + α·θ* on mergeable coordinates, θ* elsewhere.
ParamVector convex_merge(const MergeState& state, const ParamVector& theta_star_t, double alpha);

// Appends task t. Uses the closed-form α unless `alpha_override` is set;
// a degenerate task vector falls back to α = 1.
MergeState merge(const MergeState& state, const ParamVector& theta_star_t, const FisherDiag& fisher_t,
                 std::vector<int> classes = {}, std::optional<double> alpha_override = std::nullopt);

FisherDiag fisher_of(const TaskCheckpoint& ckpt);

}  // namespace pam

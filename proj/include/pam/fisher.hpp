#pragma once

#include <functional>
#include <vector>

#include "pam/fisher_diag.hpp"
#include "pam/model.hpp"

namespace pam {

using LossFn = std::function<double(const ParamVector&)>;

// Diagonal empirical Fisher over the whole dataset:
//   F_j = (1/N) Σ_i (∂ log p_θ(y_i|x_i) / ∂θ_j)²
// using the true labels. Coordinates outside `mask` (when given) are zero.
FisherDiag fisher_diag(const ModelSpec& spec, const ParamVector& theta, const Batch& data,
                       const CoordMask* mask = nullptr);

// Σ_j F_j v_j²
double quad_form(const FisherDiag& diag, const ParamVector& v);
// Σ_j F_j u_j v_j
double cross_form(const FisherDiag& diag, const ParamVector& u, const ParamVector& v);

// [L(θ+εΔ) + L(θ−εΔ) − 2 L(θ)] / ε²
double quad_form_fd(const LossFn& loss, const ParamVector& theta, const ParamVector& delta, double eps);
double quad_form_fd(const ModelSpec& spec, const ParamVector& theta, const ParamVector& delta, double eps,
                    const Batch& batch);

// Exact ΔᵀHΔ of the mean cross-entropy of a multinomial logistic model:
//   H = (1/N) Σ_i X_iᵀ (diag(p_i) − p_i p_iᵀ) X_i.
double logistic_hessian_quad_oracle(const ModelSpec& spec, const ParamVector& theta, const ParamVector& delta,
                                    const Batch& data);

// Diagonal of the same analytic Hessian, for Fisher-vs-Hessian diagnostics.
std::vector<double> logistic_hessian_diag(const ModelSpec& spec, const ParamVector& theta, const Batch& data);

}  // namespace pam

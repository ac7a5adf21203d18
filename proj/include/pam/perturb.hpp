#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pam/adamw.hpp"
#include "pam/fisher.hpp"
#include "pam/model.hpp"
#include "pam/rng.hpp"
#include "pam/stream.hpp"

namespace pam {

enum class PerturbMode { stochastic, exact3, off, gauss_control };

std::string to_string(PerturbMode mode);
PerturbMode parse_perturb_mode(const std::string& s);

// Branch probabilities of the three-point loss. p0 is the free parameter;
// p₊ = p₋ = (1 − p0)/2 and the implied regularizer weight is
// λ = ε²(1 − p0)/2.
struct PerturbConfig {
    double eps = 0.5;
    double p0 = 1.0 / 3.0;
    PerturbMode mode = PerturbMode::stochastic;

    double p_plus() const { return 0.5 * (1.0 - p0); }
    double p_minus() const { return 0.5 * (1.0 - p0); }
    double lambda_eff() const { return eps * eps * (1.0 - p0) / 2.0; }

    // p0 = 1 − 2λ/ε²; ConfigError when λ > ε²/2 or λ < 0.
    static PerturbConfig from_lambda(double eps, double lambda, PerturbMode mode);
    void validate() const;
};

struct TrainConfig {
    int epochs = 5;
    int batch_size = 32;
    double lr_adapter = 3e-4;
    double lr_head = 3e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double adapter_init_std = 6.0;  // std of the random factor; the other factor starts at zero
    std::uint64_t seed = 0;

    AdamWConfig adamw() const { return {beta1, beta2, adam_eps, weight_decay}; }
    void validate() const;
};

// Returns −ε, 0 or +ε with probabilities p₋, p0, p₊. The draw depends only
// on (stream.key, counter).
double sample_perturbation(const rng::CounterRng& stream, std::uint64_t counter, const PerturbConfig& cfg);

// Counter used for the branch draw of one optimizer step.
std::uint64_t step_counter(int epoch, int step);

// ce_loss at θ̂_{t−1} + (1 + ε̃)·Δ.
double perturbed_loss(const ModelSpec& spec, const ParamVector& theta_hat_prev, const ParamVector& adapter_delta,
                      double eps_tilde, const Batch& batch);

// p0·L(θ) + p₊·L(θ+εΔ) + p₋·L(θ−εΔ), with θ = θ̂_{t−1} + Δ.
double regularized_loss_exact3(const ModelSpec& spec, const ParamVector& theta_hat_prev,
                               const ParamVector& adapter_delta, const PerturbConfig& cfg, const Batch& batch);
// Same three-point objective for an arbitrary loss, evaluated around `theta`.
double regularized_loss_exact3(const LossFn& loss, const ParamVector& theta, const ParamVector& delta,
                               const PerturbConfig& cfg);

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    std::array<long, 3> branch_counts{};  // −ε, 0, +ε
    double grad_norm = 0.0;               // mean step gradient norm over trainable factors

    bool operator==(const EpochLog&) const = default;
};

struct TrainResult {
    ParamVector theta_star;
    std::vector<EpochLog> log;
};

// Trains a fresh low-rank adapter on the hidden block plus the head rows of
// `new_classes` on top of the frozen θ̂_{t−1}. The softmax window of `spec`
// selects the classes the task loss covers.
TrainResult train_task(const ModelSpec& spec, const ParamVector& theta_hat_prev, const TaskDataset& task,
                       const TrainConfig& tcfg, const PerturbConfig& pcfg, std::span<const int> new_classes);

}  // namespace pam

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pam/params.hpp"

namespace pam {

enum class ModelKind { logistic, mlp2 };
enum class Activation { tanh, sigmoid, softplus };

std::string to_string(ModelKind kind);
std::string to_string(Activation act);
ModelKind parse_model_kind(const std::string& s);
Activation parse_activation(const std::string& s);

// Architecture plus the class window that takes part in the softmax.
//
// Coordinate layout:
//   logistic: [W: C×d][b: C]
//   mlp2:     [W1: h×d][b1: h][W2: C×h][b2: C]
// The head has one row per class over the union of every task's classes;
// logits outside [class_begin, class_end) are excluded from the softmax.
struct ModelSpec {
    ModelKind kind = ModelKind::mlp2;
    std::size_t input_dim = 1;
    std::size_t hidden_dim = 1;
    Activation activation = Activation::tanh;
    std::size_t num_classes = 1;
    std::size_t adapter_rank = 1;
    int class_begin = 0;
    int class_end = -1;  // -1 means num_classes

    std::size_t dim() const;
    int window_begin() const { return class_begin; }
    int window_end() const { return class_end < 0 ? static_cast<int>(num_classes) : class_end; }
    ModelSpec with_window(int begin, int end) const;
    void validate() const;

    // W1 for mlp2; throws UnsupportedModelError for logistic.
    Site hidden_site() const;
    Site head_weight_site() const;
    std::size_t head_bias_offset() const;
    // Coordinates of the head rows (weights + bias) for `classes`.
    CoordMask head_mask(std::span<const int> classes) const;
    // Coordinates low-rank adapters may touch (W1 for mlp2, none for logistic).
    CoordMask adapter_mask() const;
};

struct Batch {
    Matrix inputs;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    bool operator==(const Batch&) const = default;
};

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};

// n×C logits over all head classes.
Matrix forward(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs);

// Mean over the batch of −log p̂_y, softmax restricted to the class window.
double ce_loss(const ModelSpec& spec, const ParamVector& theta, const Batch& batch);

// Gradient of ce_loss; coordinates outside `trainable` (when given) are zero.
ParamVector grad(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                 const CoordMask* trainable = nullptr);
LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                       const CoordMask* trainable = nullptr);

// acc[j] += Σ_n (∂ log p(y_n|x_n) / ∂θ_j)² over coordinates in `mask`.
void accumulate_squared_sample_grads(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                                     const CoordMask* mask, std::span<double> acc);

// Argmax over `classes` (lowest id wins ties); empty span means the window.
std::vector<int> predict(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs,
                         std::span<const int> classes = {});
double accuracy(const ModelSpec& spec, const ParamVector& theta, const Batch& data,
                std::span<const int> classes = {});

// Deterministic pairwise (tree) summation.
double pairwise_sum(std::span<const double> xs);

}  // namespace pam

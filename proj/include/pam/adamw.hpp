#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pam {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Adam with decoupled weight decay over one parameter group.
class AdamW {
public:
    AdamW(std::size_t n, AdamWConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grads, double lr);

    std::size_t steps() const { return t_; }

private:
    AdamWConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

}  // namespace pam

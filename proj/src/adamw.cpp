#include "pam/adamw.hpp"

#include <cmath>

#include "pam/errors.hpp"

namespace pam {

void AdamW::step(std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw DimensionError("AdamW::step: parameter/gradient size mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        params[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * params[i]);
    }
}

}  // namespace pam

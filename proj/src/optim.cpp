#include "epb/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace epb {

AdamW::AdamW(std::size_t size, AdamWConfig config)
    : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw std::invalid_argument("optimizer state and parameter sizes differ");
    }
    ++t_;
    beta1_pow_ *= config_.beta1;
    beta2_pow_ *= config_.beta2;
    const double decay = 1.0 - lr * config_.weight_decay;
    const double c1 = 1.0 - beta1_pow_;
    const double c2 = 1.0 - beta2_pow_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
        params[i] *= decay;
        params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.eps);
    }
}

double warmup_linear_lr(std::size_t step, std::size_t total_steps, double peak,
                        double warmup_fraction) {
    if (total_steps == 0) {
        return 0.0;
    }
    const double s = static_cast<double>(step);
    const double total = static_cast<double>(total_steps);
    const double warmup = warmup_fraction * total;
    if (s < warmup) {
        return peak * s / warmup;
    }
    if (total <= warmup) {
        return peak;
    }
    const double remaining = 1.0 - (s - warmup) / (total - warmup);
    return remaining > 0.0 ? peak * remaining : 0.0;
}

} // namespace epb

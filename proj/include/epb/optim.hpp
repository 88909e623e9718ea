#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace epb {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay: each step first scales every
/// parameter by (1 - lr * weight_decay), then applies the bias-corrected
/// Adam update.
class AdamW {
public:
    explicit AdamW(std::size_t size, AdamWConfig config = {});

    void step(std::span<double> params, std::span<const double> grads, double lr);

    std::size_t steps_taken() const noexcept { return t_; }
    const AdamWConfig& config() const noexcept { return config_; }

private:
    AdamWConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
    double beta1_pow_ = 1.0;
    double beta2_pow_ = 1.0;
};

/// Learning rate for 0-based `step` out of `total_steps`: linear rise from 0
/// to `peak` over the first warmup_fraction * total_steps steps, then linear
/// decay to 0 at total_steps.
double warmup_linear_lr(std::size_t step, std::size_t total_steps, double peak,
                        double warmup_fraction);

} // namespace epb

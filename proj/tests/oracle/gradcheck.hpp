#pragma once

// Central finite differences against the analytic gradient of the probe
// batch loss, all in double.

#include "epb/probe_math.hpp"
#include "epb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace epb::oracle {

struct GradCheckCase {
    probe_math::Shape shape;
    std::vector<double> params;
    std::vector<double> x;
    std::vector<LabelSet> gold;
};

inline GradCheckCase random_case(std::uint64_t seed, ProbeKind kind, Labeling labeling) {
    Rng rng(seed);
    GradCheckCase c;
    c.shape.kind = kind;
    c.shape.labeling = labeling;
    c.shape.d = 1 + rng.below(8);
    c.shape.c = 2 + rng.below(3);
    c.shape.h = kind == ProbeKind::mlp ? 1 + rng.below(8) : 0;
    const std::size_t batch = 1 + rng.below(4);
    c.params.resize(c.shape.param_count());
    for (auto& p : c.params) p = rng.normal() * 0.7;
    c.x.resize(batch * c.shape.d);
    for (auto& v : c.x) v = rng.normal();
    for (std::size_t e = 0; e < batch; ++e) {
        LabelSet gold;
        if (labeling == Labeling::single_label) {
            gold.push_back(static_cast<std::uint32_t>(rng.below(c.shape.c)));
        } else {
            for (std::uint32_t j = 0; j < c.shape.c; ++j) {
                if (rng.uniform() < 0.5) gold.push_back(j);
            }
        }
        c.gold.push_back(gold);
    }
    return c;
}

/// Largest relative error |a - n| / max(|a|, |n|, 1e-6) over all parameters.
/// The floor keeps round-off on vanishing gradients (dead ReLU units) from
/// counting as a mismatch.
inline double max_relative_error(const GradCheckCase& c, double h = 1e-5) {
    probe_math::Workspace ws;
    const std::size_t n = c.gold.size();
    std::vector<double> analytic(c.params.size(), 0.0);
    probe_math::batch_loss(c.shape, c.params.data(), c.x.data(), c.gold.data(), n, nullptr,
                           analytic.data(), ws);
    std::vector<double> p = c.params;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + h;
        const double up = probe_math::batch_loss(c.shape, p.data(), c.x.data(), c.gold.data(), n,
                                                 nullptr, nullptr, ws);
        p[i] = saved - h;
        const double down = probe_math::batch_loss(c.shape, p.data(), c.x.data(), c.gold.data(), n,
                                                   nullptr, nullptr, ws);
        p[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

} // namespace epb::oracle

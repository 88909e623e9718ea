#pragma once

// Probe forward/backward kernels, templated on the parameter and input
// element types. All arithmetic is carried out in double.
//
// Parameter layout:
//   linear: W (C x d, row-major), b (C)
//   mlp:    W1 (H x d), b1 (H), W2 (C x H), b2 (C)

#include "epb/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace epb {

enum class ProbeKind { linear, mlp };

namespace probe_math {

struct Shape {
    ProbeKind kind = ProbeKind::linear;
    std::size_t d = 0;
    std::size_t h = 0; // mlp only
    std::size_t c = 0;
    Labeling labeling = Labeling::single_label;

    std::size_t param_count() const noexcept {
        return kind == ProbeKind::linear ? c * d + c : h * d + h + c * h + c;
    }
    /// Width of the dropout mask: the input for linear, the hidden layer for mlp.
    std::size_t mask_width() const noexcept { return kind == ProbeKind::linear ? d : h; }
};

/// Numerically stable log(1 + exp(z)).
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Scratch buffers reused across calls.
struct Workspace {
    std::vector<double> input;  // masked input (linear)
    std::vector<double> pre;    // hidden pre-activation (mlp)
    std::vector<double> hidden; // masked post-ReLU activation (mlp)
    std::vector<double> logits;
    std::vector<double> dlogits;
    std::vector<double> dhidden;

    void reserve(const Shape& s) {
        input.resize(s.d);
        pre.resize(s.h);
        hidden.resize(s.h);
        logits.resize(s.c);
        dlogits.resize(s.c);
        dhidden.resize(s.h);
    }
};

/// Computes logits into ws.logits. `mask` holds inverted-dropout scale
/// factors (0 or 1/(1-rate)) of width shape.mask_width(), or is null.
template <typename P, typename X>
void forward_logits(const Shape& s, const P* params, const X* x, const double* mask,
                    Workspace& ws) {
    ws.reserve(s);
    if (s.kind == ProbeKind::linear) {
        for (std::size_t k = 0; k < s.d; ++k) {
            ws.input[k] = mask ? static_cast<double>(x[k]) * mask[k] : static_cast<double>(x[k]);
        }
        const P* w = params;
        const P* b = params + s.c * s.d;
        for (std::size_t j = 0; j < s.c; ++j) {
            double z = static_cast<double>(b[j]);
            const P* row = w + j * s.d;
            for (std::size_t k = 0; k < s.d; ++k) {
                z += static_cast<double>(row[k]) * ws.input[k];
            }
            ws.logits[j] = z;
        }
        return;
    }
    const P* w1 = params;
    const P* b1 = w1 + s.h * s.d;
    const P* w2 = b1 + s.h;
    const P* b2 = w2 + s.c * s.h;
    for (std::size_t i = 0; i < s.h; ++i) {
        double a = static_cast<double>(b1[i]);
        const P* row = w1 + i * s.d;
        for (std::size_t k = 0; k < s.d; ++k) {
            a += static_cast<double>(row[k]) * static_cast<double>(x[k]);
        }
        ws.pre[i] = a;
        const double relu = a > 0.0 ? a : 0.0;
        ws.hidden[i] = mask ? relu * mask[i] : relu;
    }
    for (std::size_t j = 0; j < s.c; ++j) {
        double z = static_cast<double>(b2[j]);
        const P* row = w2 + j * s.h;
        for (std::size_t i = 0; i < s.h; ++i) {
            z += static_cast<double>(row[i]) * ws.hidden[i];
        }
        ws.logits[j] = z;
    }
}

/// Softmax (single-label) or element-wise sigmoid (multi-label) of logits.
inline void probabilities(const Shape& s, const std::vector<double>& logits,
                          std::vector<double>& out) {
    out.resize(s.c);
    if (s.labeling == Labeling::multi_label) {
        for (std::size_t j = 0; j < s.c; ++j) out[j] = sigmoid(logits[j]);
        return;
    }
    const double mx = *std::max_element(logits.begin(), logits.begin() + static_cast<long>(s.c));
    double sum = 0.0;
    for (std::size_t j = 0; j < s.c; ++j) {
        out[j] = std::exp(logits[j] - mx);
        sum += out[j];
    }
    for (std::size_t j = 0; j < s.c; ++j) out[j] /= sum;
}

/// Loss of one example given logits in ws; fills ws.dlogits with dLoss/dz.
/// Cross-entropy for single-label, summed per-class binary cross-entropy for
/// multi-label.
inline double loss_from_logits(const Shape& s, const LabelSet& gold, Workspace& ws) {
    if (s.labeling == Labeling::multi_label) {
        double loss = 0.0;
        std::size_t g = 0;
        for (std::size_t j = 0; j < s.c; ++j) {
            const bool positive = g < gold.size() && gold[g] == j;
            if (positive) ++g;
            const double z = ws.logits[j];
            loss += softplus(z) - (positive ? z : 0.0);
            ws.dlogits[j] = sigmoid(z) - (positive ? 1.0 : 0.0);
        }
        return loss;
    }
    const double mx = *std::max_element(ws.logits.begin(), ws.logits.begin() + static_cast<long>(s.c));
    double sum = 0.0;
    for (std::size_t j = 0; j < s.c; ++j) {
        ws.dlogits[j] = std::exp(ws.logits[j] - mx);
        sum += ws.dlogits[j];
    }
    const std::size_t y = gold.at(0);
    const double loss = mx + std::log(sum) - ws.logits[y];
    for (std::size_t j = 0; j < s.c; ++j) ws.dlogits[j] /= sum;
    ws.dlogits[y] -= 1.0;
    return loss;
}

/// Adds scale * dLoss/dparams for one example (after forward_logits and
/// loss_from_logits) into grad.
template <typename P, typename X>
void accumulate_grad(const Shape& s, const P* params, const X* x, const double* mask,
                     Workspace& ws, double scale, double* grad) {
    if (s.kind == ProbeKind::linear) {
        double* gw = grad;
        double* gb = grad + s.c * s.d;
        for (std::size_t j = 0; j < s.c; ++j) {
            const double dz = scale * ws.dlogits[j];
            double* row = gw + j * s.d;
            for (std::size_t k = 0; k < s.d; ++k) row[k] += dz * ws.input[k];
            gb[j] += dz;
        }
        return;
    }
    const P* w2 = params + s.h * s.d + s.h;
    double* gw1 = grad;
    double* gb1 = gw1 + s.h * s.d;
    double* gw2 = gb1 + s.h;
    double* gb2 = gw2 + s.c * s.h;
    std::fill(ws.dhidden.begin(), ws.dhidden.end(), 0.0);
    for (std::size_t j = 0; j < s.c; ++j) {
        const double dz = scale * ws.dlogits[j];
        double* grow = gw2 + j * s.h;
        const P* wrow = w2 + j * s.h;
        for (std::size_t i = 0; i < s.h; ++i) {
            grow[i] += dz * ws.hidden[i];
            ws.dhidden[i] += dz * static_cast<double>(wrow[i]);
        }
        gb2[j] += dz;
    }
    for (std::size_t i = 0; i < s.h; ++i) {
        if (ws.pre[i] <= 0.0) continue;
        const double da = mask ? ws.dhidden[i] * mask[i] : ws.dhidden[i];
        if (da == 0.0) continue;
        double* grow = gw1 + i * s.d;
        for (std::size_t k = 0; k < s.d; ++k) grow[k] += da * static_cast<double>(x[k]);
        gb1[i] += da;
    }
}

/// Mean loss over a batch of `n` rows of width d starting at `x`; when grad
/// is non-null, the gradient of the mean is added to it. `masks` holds one
/// mask row per example or is null.
template <typename P, typename X>
double batch_loss(const Shape& s, const P* params, const X* x, const LabelSet* gold,
                  std::size_t n, const double* masks, double* grad, Workspace& ws) {
    double total = 0.0;
    const double scale = 1.0 / static_cast<double>(n);
    const std::size_t mw = s.mask_width();
    for (std::size_t e = 0; e < n; ++e) {
        const X* row = x + e * s.d;
        const double* mask = masks ? masks + e * mw : nullptr;
        forward_logits(s, params, row, mask, ws);
        total += loss_from_logits(s, gold[e], ws);
        if (grad) {
            accumulate_grad(s, params, row, mask, ws, scale, grad);
        }
    }
    return total * scale;
}

} // namespace probe_math
} // namespace epb

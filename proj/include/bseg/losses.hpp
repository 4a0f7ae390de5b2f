#pragma once

#include <array>

#include "bseg/model.hpp"

namespace bseg {

// One epsilon for every denominator guard and log clamp in the objective.
inline constexpr double kLossEps = 1e-7;

/// Mean binary cross-entropy over all pixels. `pred` holds probabilities
/// (clamped internally to [eps, 1-eps]); `target` is binary, same shape.
Var ce_loss(const Var& pred, const Var& target);

/// 1 - soft IoU: 1 - sum(y*p) / (sum(y + p - y*p) + eps).
Var miou_loss(const Var& pred, const Var& target);

/// 1 - 2*sum(y*p) / (sum(y) + sum(p) + eps). When both masses are below eps
/// the pair is treated as a perfect blank match and the loss is exactly 0.
Var dice_loss(const Var& pred, const Var& target);

struct LossBreakdown {
    std::array<double, 3> ce{};
    std::array<double, 3> miou{};
    double boundary_dice = 0.0;
    double alpha = 3.0;
    double total = 0.0;
    Var total_var;  // scalar node to backprop

    /// Name of the first non-finite component, or nullptr when all are finite.
    const char* nonfinite_component() const;
};

/// Max-pool a (B,1,H,W) binary map by an integer factor (boundary targets are
/// downsampled this way to the stride-4 logits resolution).
Tensor maxpool_mask(const Tensor& mask, int64_t factor);

/// Composite objective: sum over the 3 interior heads of (CE + mIoU) plus
/// alpha * boundary Dice (heads without a boundary output skip that term).
/// Accumulation order is fixed: ((h1 + h2) + h3) + alpha*dice with
/// h_j = ce_j + miou_j, so the total can be recomputed exactly from the parts.
/// `label_mask` is (B,1,H,W) with integer class values (binary: 0/1);
/// `boundary_mask` is (B,1,H,W) binary. classes == 1 selects the sigmoid
/// path; classes K >= 2 applies channel softmax with one-vs-all CE/mIoU
/// averaged over the K classes.
LossBreakdown total_loss(const SegOutput& out, const Tensor& label_mask,
                         const Tensor& boundary_mask, double alpha, int64_t classes);

}  // namespace bseg

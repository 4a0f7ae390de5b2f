#include "bseg/losses.hpp"

#include <cmath>

namespace bseg {

namespace {

void check_pair(const Var& pred, const Var& target, const char* op) {
    if (!pred->value.same_shape(target->value))
        throw ShapeError(std::string(op) + ": prediction " + shape_str(pred->value.shape()) +
                         " vs target " + shape_str(target->value.shape()));
}

}  // namespace

Var ce_loss(const Var& pred, const Var& target) {
    check_pair(pred, target, "ce_loss");
    Var p = ops::clamp(pred, kLossEps, 1.0 - kLossEps);
    Var pos = ops::mul(target, ops::log(p));
    Var neg = ops::mul(ops::rsub_scalar(1.0, target), ops::log(ops::rsub_scalar(1.0, p)));
    return ops::mul_scalar(ops::mean_all(ops::add(pos, neg)), -1.0);
}

Var miou_loss(const Var& pred, const Var& target) {
    check_pair(pred, target, "miou_loss");
    Var inter = ops::sum_all(ops::mul(target, pred));
    Var uni = ops::sub(ops::add(ops::sum_all(target), ops::sum_all(pred)), inter);
    return ops::rsub_scalar(1.0, ops::div(inter, ops::add_scalar(uni, kLossEps)));
}

Var dice_loss(const Var& pred, const Var& target) {
    check_pair(pred, target, "dice_loss");
    const double target_mass = target->value.sum();
    const double pred_mass = pred->value.sum();
    if (target_mass < kLossEps && pred_mass < kLossEps)
        return make_constant(Tensor::scalar(0.0));  // blank matched by blank
    Var inter = ops::sum_all(ops::mul(target, pred));
    Var denom = ops::add_scalar(ops::add(ops::sum_all(target), ops::sum_all(pred)), kLossEps);
    return ops::rsub_scalar(1.0, ops::div(ops::mul_scalar(inter, 2.0), denom));
}

Tensor maxpool_mask(const Tensor& mask, int64_t factor) {
    check(mask.ndim() == 4 && mask.dim(1) == 1, "maxpool_mask: expects (B,1,H,W)");
    check(mask.dim(2) % factor == 0 && mask.dim(3) % factor == 0,
          "maxpool_mask: factor must divide the mask size");
    const int64_t B = mask.dim(0), H = mask.dim(2), W = mask.dim(3);
    const int64_t Ho = H / factor, Wo = W / factor;
    Tensor out({B, 1, Ho, Wo});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                double m = 0.0;
                for (int64_t ky = 0; ky < factor; ++ky)
                    for (int64_t kx = 0; kx < factor; ++kx)
                        m = std::max(m, mask.at(b, 0, oy * factor + ky, ox * factor + kx));
                out.at(b, 0, oy, ox) = m;
            }
    return out;
}

const char* LossBreakdown::nonfinite_component() const {
    for (int j = 0; j < 3; ++j) {
        static const char* ce_names[] = {"ce[head1]", "ce[head2]", "ce[head3]"};
        static const char* miou_names[] = {"miou[head1]", "miou[head2]", "miou[head3]"};
        if (!std::isfinite(ce[static_cast<size_t>(j)])) return ce_names[j];
        if (!std::isfinite(miou[static_cast<size_t>(j)])) return miou_names[j];
    }
    if (!std::isfinite(boundary_dice)) return "boundary_dice";
    if (!std::isfinite(total)) return "total";
    return nullptr;
}

namespace {

// (B,K,H,W) logits -> per-channel probabilities by softmax over K.
Var channel_softmax(const Var& logits) {
    Var t = ops::permute(logits, {0, 2, 3, 1});
    return ops::permute(ops::softmax_lastdim(t), {0, 3, 1, 2});
}

// Binary indicator (B,1,H,W) for label == k.
Tensor onehot_channel(const Tensor& label_mask, int64_t k) {
    Tensor out(label_mask.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<int64_t>(label_mask[i]) == k ? 1.0 : 0.0;
    return out;
}

// Interior-head CE and mIoU; multi-class heads average one-vs-all terms.
std::pair<Var, Var> interior_terms(const Var& logits, const Tensor& label_mask, int64_t classes) {
    if (classes == 1) {
        Var prob = ops::sigmoid(logits);
        Var target = make_constant(label_mask);
        return {ce_loss(prob, target), miou_loss(prob, target)};
    }
    Var probs = channel_softmax(logits);
    Var ce_acc, miou_acc;
    for (int64_t k = 0; k < classes; ++k) {
        Var pk = ops::slice_channels(probs, k, 1);
        Var yk = make_constant(onehot_channel(label_mask, k));
        Var ck = ce_loss(pk, yk);
        Var mk = miou_loss(pk, yk);
        ce_acc = ce_acc ? ops::add(ce_acc, ck) : ck;
        miou_acc = miou_acc ? ops::add(miou_acc, mk) : mk;
    }
    const double inv = 1.0 / static_cast<double>(classes);
    return {ops::mul_scalar(ce_acc, inv), ops::mul_scalar(miou_acc, inv)};
}

}  // namespace

LossBreakdown total_loss(const SegOutput& out, const Tensor& label_mask,
                         const Tensor& boundary_mask, double alpha, int64_t classes) {
    if (out.interior_logits.size() != 3)
        throw ShapeError("total_loss: expected 3 interior heads, got " +
                         std::to_string(out.interior_logits.size()));
    LossBreakdown lb;
    lb.alpha = alpha;
    Var total;
    for (int j = 0; j < 3; ++j) {
        auto [cej, miouj] =
            interior_terms(out.interior_logits[static_cast<size_t>(j)], label_mask, classes);
        lb.ce[static_cast<size_t>(j)] = cej->value[0];
        lb.miou[static_cast<size_t>(j)] = miouj->value[0];
        Var head = ops::add(cej, miouj);
        total = total ? ops::add(total, head) : head;
    }
    if (out.boundary_logits) {
        const int64_t factor = label_mask.dim(2) / out.boundary_logits->value.dim(2);
        Tensor btarget = maxpool_mask(boundary_mask, factor);
        Var bprob = ops::sigmoid(out.boundary_logits);
        Var bdice = dice_loss(bprob, make_constant(btarget));
        lb.boundary_dice = bdice->value[0];
        total = ops::add(total, ops::mul_scalar(bdice, alpha));
    }
    lb.total_var = total;
    lb.total = total->value[0];
    return lb;
}

}  // namespace bseg

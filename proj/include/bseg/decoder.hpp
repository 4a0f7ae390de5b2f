#pragma once

#include "bseg/layers.hpp"

namespace bseg {

/// One boundary-injection decoder stage. Inputs: the boundary feature resized
/// to the skip resolution, the encoder skip feature, and the previous decoder
/// feature at half resolution (bilinearly upsampled 2x inside).
///
/// Foreground path: concat(fb, fc, fd_up) -> 2x Conv-BN-ReLU.
/// Background path: 3x Conv-BN-ReLU over (1 - sigmoid(a)) * fc, where `a` is
/// a 1-channel attention logit map derived from fd_up by a 1x1 conv; the
/// foreground attention sigmoid(a) and background gate sum to 1 pointwise.
/// Output: Conv-BN-ReLU fusion of concat(F_fg, F_bg, fd_up).
class BoundaryInject {
public:
    BoundaryInject(ParamStore& store, const std::string& prefix, int64_t fb_ch, int64_t skip_ch,
                   int64_t dec_ch, std::mt19937_64& rng);
    Var forward(const Var& fb, const Var& fc, const Var& fd_prev, bool training) const;

    /// Background branch on its own: Convs((1 - sigmoid(att(fd_up))) * fc).
    Var background_path(const Var& fc, const Var& fd_up, bool training) const;
    /// Foreground attention map sigmoid(att(fd_up)), (B,1,H,W).
    Var foreground_attention(const Var& fd_up) const;
    Conv2d& attention_conv() { return att_; }

private:
    Conv2d att_;  // 1x1 dec_ch -> 1
    ConvBnRelu fg1_, fg2_;
    ConvBnRelu bg1_, bg2_, bg3_;
    ConvBnRelu fuse_;
};

/// Plain skip-fusion stage used by the non-injection variants:
/// concat(fc, fd_up) -> 2x Conv-BN-ReLU.
class PlainStage {
public:
    PlainStage(ParamStore& store, const std::string& prefix, int64_t skip_ch, int64_t dec_ch,
               std::mt19937_64& rng);
    Var forward(const Var& fc, const Var& fd_prev, bool training) const;

private:
    ConvBnRelu s1_, s2_;
};

}  // namespace bseg

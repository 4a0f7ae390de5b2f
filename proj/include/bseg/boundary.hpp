#pragma once

#include <array>
#include <utility>

#include "bseg/layers.hpp"

namespace bseg {

// Fixed 3x3 first-derivative kernels, applied as cross-correlations
// (the usual deep-learning convolution convention). Never updated.
inline constexpr std::array<double, 9> kSobelX{-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr std::array<double, 9> kSobelY{-1, -2, -1, 0, 0, 0, 1, 2, 1};

/// Depthwise horizontal/vertical gradient maps of f (B,C,h,w), stride 1,
/// zero padding 1. The kernel weights carry no gradient. Requires h,w >= 3.
std::pair<Var, Var> sobel_gradients(const Var& f);

struct BoundaryFeature {
    Var feature;  // fused boundary-enhanced feature at stride-4 resolution
    Var logits;   // (B,1,H/4,W/4) boundary logits from the supervised head
};

/// Dual-level boundary module. With use_sobel=true this is the full
/// gradient-gated version: per-channel Sobel maps are concatenated, projected
/// 2C->C by a learnable 1x1 conv, squashed by a sigmoid and multiplied into
/// the feature. With use_sobel=false (the ablation variant) the gradient maps
/// are replaced by the feature itself, keeping the trainable layer set
/// identical while dropping the fixed kernels.
class BoundaryEnhance {
public:
    BoundaryEnhance(ParamStore& store, const std::string& prefix, int64_t c1, int64_t c4,
                    int64_t width, bool use_sobel, std::mt19937_64& rng);

    /// f1 at stride 4, f4 at stride 32 (spatially f1/8).
    BoundaryFeature forward(const Var& f1, const Var& f4, bool training) const;

    /// Gradient-gated (or self-gated) feature map, same shape as f.
    Var edge_enhance(const Var& f, const Conv2d& gate_proj) const;

    const Conv2d& gate1() const { return gate1_; }
    const Conv2d& gate4() const { return gate4_; }
    bool uses_sobel() const { return use_sobel_; }

private:
    bool use_sobel_;
    Var kx_, ky_;  // (3,3) buffers, registered only when use_sobel_
    Conv2d gate1_, gate4_;    // 1x1, 2C->C
    Conv2d reduce4_;          // 1x1, c4->width (before upsampling)
    Conv2d match1_, match4_;  // 1x1 channel matching to `width`
    ConvBnRelu fuse1_, fuse2_;
    Conv2d head_;  // 1x1 width->1 boundary logits
};

}  // namespace bseg

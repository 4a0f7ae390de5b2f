#pragma once

#include <array>
#include <optional>
#include <vector>

#include "bseg/layers.hpp"

namespace bseg {

struct BackboneConfig {
    int64_t stem_channels = 64;
    std::array<int64_t, 4> stage_channels{64, 128, 256, 512};
    std::array<int64_t, 4> blocks_per_stage{2, 2, 2, 2};

    /// Throws ConfigError on zero counts or decreasing channel widths.
    void validate() const;
};

/// The four encoder maps at strides 4/8/16/32 relative to the input.
struct FeaturePyramid {
    std::array<Var, 4> levels;
    static constexpr std::array<int, 4> kStrides{4, 8, 16, 32};
};

/// Bottleneck residual unit: 1x1 reduce, 3x3 (optionally strided), 1x1 expand,
/// with a projection shortcut when shape changes.
class Bottleneck {
public:
    Bottleneck(ParamStore& store, const std::string& name, int64_t cin, int64_t cout, int stride,
               std::mt19937_64& rng);
    Var forward(const Var& x, bool training) const;

private:
    Conv2d c1_, c2_, c3_;
    BatchNorm2d b1_, b2_, b3_;
    std::optional<Conv2d> proj_;
    std::optional<BatchNorm2d> proj_bn_;
};

/// Convolution stream: 7x7/s2 stem conv + BN + ReLU + 3x3/s2 max pool, then
/// four residual stages. Stage 1 keeps stride 4, stages 2-4 halve resolution,
/// yielding the stride-{4,8,16,32} pyramid.
class Backbone {
public:
    Backbone(ParamStore& store, const std::string& prefix, const BackboneConfig& cfg,
             std::mt19937_64& rng);
    /// x must be (B,3,H,W) with H and W divisible by 32.
    FeaturePyramid forward(const Var& x, bool training) const;

private:
    Conv2d stem_conv_;
    BatchNorm2d stem_bn_;
    std::array<std::vector<Bottleneck>, 4> stages_;
};

/// Exact trainable-scalar count for a backbone built from `cfg`.
int64_t backbone_param_count(const BackboneConfig& cfg);

}  // namespace bseg

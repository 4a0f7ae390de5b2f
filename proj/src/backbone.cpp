#include "bseg/backbone.hpp"

#include <algorithm>

namespace bseg {

void BackboneConfig::validate() const {
    if (stem_channels < 1) throw ConfigError("backbone: stem_channels must be >= 1");
    for (int64_t c : stage_channels)
        if (c < 1) throw ConfigError("backbone: stage channels must be >= 1");
    for (int64_t b : blocks_per_stage)
        if (b < 1) throw ConfigError("backbone: blocks per stage must be >= 1");
    for (size_t i = 1; i < stage_channels.size(); ++i)
        if (stage_channels[i] < stage_channels[i - 1])
            throw ConfigError("backbone: stage channels must be nondecreasing with depth");
}

namespace {
int64_t mid_channels(int64_t cout) { return std::max<int64_t>(1, cout / 4); }
}  // namespace

Bottleneck::Bottleneck(ParamStore& store, const std::string& name, int64_t cin, int64_t cout,
                       int stride, std::mt19937_64& rng)
    : c1_(store, name + ".c1", cin, mid_channels(cout), 1, 1, 0, rng, /*bias=*/false),
      c2_(store, name + ".c2", mid_channels(cout), mid_channels(cout), 3, stride, 1, rng, false),
      c3_(store, name + ".c3", mid_channels(cout), cout, 1, 1, 0, rng, false),
      b1_(store, name + ".b1", mid_channels(cout)),
      b2_(store, name + ".b2", mid_channels(cout)),
      b3_(store, name + ".b3", cout) {
    if (stride != 1 || cin != cout) {
        proj_.emplace(store, name + ".proj", cin, cout, 1, stride, 0, rng, false);
        proj_bn_.emplace(store, name + ".proj_bn", cout);
    }
}

Var Bottleneck::forward(const Var& x, bool training) const {
    Var h = ops::relu(b1_.forward(c1_.forward(x), training));
    h = ops::relu(b2_.forward(c2_.forward(h), training));
    h = b3_.forward(c3_.forward(h), training);
    Var skip = proj_ ? proj_bn_->forward(proj_->forward(x), training) : x;
    return ops::relu(ops::add(h, skip));
}

Backbone::Backbone(ParamStore& store, const std::string& prefix, const BackboneConfig& cfg,
                   std::mt19937_64& rng)
    : stem_conv_(store, prefix + ".stem.conv", 3, cfg.stem_channels, 7, 2, 3, rng, /*bias=*/false),
      stem_bn_(store, prefix + ".stem.bn", cfg.stem_channels) {
    cfg.validate();
    int64_t cin = cfg.stem_channels;
    for (int s = 0; s < 4; ++s) {
        const int64_t cout = cfg.stage_channels[static_cast<size_t>(s)];
        const int64_t blocks = cfg.blocks_per_stage[static_cast<size_t>(s)];
        for (int64_t b = 0; b < blocks; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            stages_[static_cast<size_t>(s)].emplace_back(
                store, prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                cin, cout, stride, rng);
            cin = cout;
        }
    }
}

FeaturePyramid Backbone::forward(const Var& x, bool training) const {
    const Tensor& xv = x->value;
    check(xv.ndim() == 4, "backbone: input must be (B,3,H,W), got " + shape_str(xv.shape()));
    if (xv.dim(1) != 3)
        throw ShapeError("backbone: expected 3 input channels, got " + std::to_string(xv.dim(1)));
    if (xv.dim(2) % 32 != 0 || xv.dim(3) % 32 != 0)
        throw ShapeError("backbone: input height and width must be divisible by 32, got " +
                         shape_str(xv.shape()));
    Var h = ops::relu(stem_bn_.forward(stem_conv_.forward(x), training));
    h = ops::maxpool2d(h, 3, 2, 1);  // total stride 4
    FeaturePyramid pyr;
    for (int s = 0; s < 4; ++s) {
        for (const Bottleneck& blk : stages_[static_cast<size_t>(s)]) h = blk.forward(h, training);
        pyr.levels[static_cast<size_t>(s)] = h;
    }
    return pyr;
}

int64_t backbone_param_count(const BackboneConfig& cfg) {
    cfg.validate();
    ParamStore store;
    std::mt19937_64 rng(0);
    Backbone bb(store, "backbone", cfg, rng);
    return store.param_count("backbone.");
}

}  // namespace bseg

#include "bseg/model.hpp"

namespace bseg {

Variant variant_from_string(const std::string& s) {
    if (s == "cnn") return Variant::Cnn;
    if (s == "cnn+vit") return Variant::CnnVit;
    if (s == "cnn+vit+cbm") return Variant::CnnVitCbm;
    if (s == "cnn+vit+bem") return Variant::CnnVitBem;
    if (s == "full") return Variant::Full;
    throw ConfigError("unknown variant '" + s +
                      "' (expected cnn, cnn+vit, cnn+vit+cbm, cnn+vit+bem or full)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Cnn: return "cnn";
        case Variant::CnnVit: return "cnn+vit";
        case Variant::CnnVitCbm: return "cnn+vit+cbm";
        case Variant::CnnVitBem: return "cnn+vit+bem";
        case Variant::Full: return "full";
    }
    throw ConfigError("invalid variant enum value");
}

void ModelConfig::validate() const {
    backbone.validate();
    if (vit_dmodel < 1 || heads < 1 || classes < 1 || boundary_width < 1 || vit_channels < 1 ||
        bem_channels < 1 || decoder_channels < 1)
        throw ConfigError("model config: all sizes must be >= 1");
    if (vit_dmodel % heads != 0) throw ConfigError("model config: heads must divide vit_dmodel");
    if (image_size % 32 != 0 || image_size < 32)
        throw ConfigError("model config: image_size must be a positive multiple of 32");
}

ModelConfig ModelConfig::tiny(int64_t image_size, Variant v) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.backbone.stem_channels = 8;
    cfg.backbone.stage_channels = {8, 16, 32, 64};
    cfg.backbone.blocks_per_stage = {1, 1, 1, 1};
    cfg.vit_dmodel = 16;
    cfg.heads = 2;
    cfg.vit_channels = 16;
    cfg.bem_channels = 16;
    cfg.decoder_channels = 16;
    cfg.image_size = image_size;
    return cfg;
}

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    backbone_.emplace(store_, "backbone", cfg_.backbone, rng);

    const int64_t c1 = cfg_.backbone.stage_channels[0];
    const int64_t c2 = cfg_.backbone.stage_channels[1];
    const int64_t c3 = cfg_.backbone.stage_channels[2];
    const int64_t c4 = cfg_.backbone.stage_channels[3];
    const int64_t dec = cfg_.decoder_channels;

    if (has_vit()) {
        LightVitConfig vc;
        vc.d_model = cfg_.vit_dmodel;
        vc.heads = cfg_.heads;
        vc.out_channels = cfg_.vit_channels;
        vit_.emplace(store_, "lightvit", c1, cfg_.image_size / 4, cfg_.image_size / 4, vc, rng);
    }
    if (has_boundary_head()) {
        const bool use_sobel =
            cfg_.variant == Variant::CnnVitBem || cfg_.variant == Variant::Full;
        bem_.emplace(store_, "bem", c1, c4, cfg_.bem_channels, use_sobel, rng);
    }

    const int64_t bottleneck_in = has_vit() ? c4 + cfg_.vit_channels : c4;
    bottleneck_.emplace(store_, "decoder.bottleneck", bottleneck_in, dec, 1, 1, 0, rng);

    const std::array<int64_t, 3> skip_ch{c3, c2, c1};
    for (int j = 0; j < 3; ++j) {
        const std::string prefix = "decoder.stage" + std::to_string(j + 1);
        if (has_injection())
            inject_stages_.emplace_back(store_, prefix, cfg_.bem_channels,
                                        skip_ch[static_cast<size_t>(j)], dec, rng);
        else
            plain_stages_.emplace_back(store_, prefix, skip_ch[static_cast<size_t>(j)], dec, rng);
        heads_.emplace_back(store_, "decoder.head" + std::to_string(j + 1), dec, cfg_.classes, 1,
                            1, 0, rng);
    }
}

SegOutput Model::forward(const Tensor& x, bool training) {
    return forward(make_constant(x), training);
}

SegOutput Model::forward(const Var& x, bool training) {
    const Tensor& xv = x->value;
    check(xv.ndim() == 4, "model: input must be (B,3,H,W), got " + shape_str(xv.shape()));
    const int64_t H = xv.dim(2), W = xv.dim(3);
    if (has_vit() && (H != cfg_.image_size || W != cfg_.image_size))
        throw ShapeError("model: built for " + std::to_string(cfg_.image_size) + "x" +
                         std::to_string(cfg_.image_size) + " inputs, got " + shape_str(xv.shape()));

    FeaturePyramid pyr = backbone_->forward(x, training);

    Var neck = pyr.levels[3];
    if (has_vit()) {
        Var vit_out = vit_->forward(pyr.levels[0]);          // stride 4
        Var pooled = ops::avgpool2d(vit_out, 8);             // stride 4 -> 32
        neck = ops::concat_channels({pyr.levels[3], pooled});
    }
    Var fd = bottleneck_->forward(neck, training);

    BoundaryFeature bfeat;
    if (has_boundary_head()) bfeat = bem_->forward(pyr.levels[0], pyr.levels[3], training);

    SegOutput out;
    const std::array<const Var*, 3> skips{&pyr.levels[2], &pyr.levels[1], &pyr.levels[0]};
    for (int j = 0; j < 3; ++j) {
        const Var& skip = *skips[static_cast<size_t>(j)];
        if (has_injection()) {
            Var fb = ops::resize_bilinear(bfeat.feature, skip->value.dim(2), skip->value.dim(3));
            fd = inject_stages_[static_cast<size_t>(j)].forward(fb, skip, fd, training);
        } else {
            fd = plain_stages_[static_cast<size_t>(j)].forward(skip, fd, training);
        }
        Var logits = heads_[static_cast<size_t>(j)].forward(fd);
        out.interior_logits.push_back(ops::resize_bilinear(logits, H, W));
    }
    if (has_boundary_head()) out.boundary_logits = bfeat.logits;
    return out;
}

std::unique_ptr<Model> build_model(const ModelConfig& cfg, uint64_t seed) {
    return std::make_unique<Model>(cfg, seed);
}

}  // namespace bseg

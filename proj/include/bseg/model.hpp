#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bseg/backbone.hpp"
#include "bseg/boundary.hpp"
#include "bseg/decoder.hpp"
#include "bseg/light_vit.hpp"

namespace bseg {

/// Ablation variants: each row adds one component.
enum class Variant {
    Cnn,        // backbone + plain decoder, no boundary supervision
    CnnVit,     // + transformer stream at the bottleneck
    CnnVitCbm,  // + boundary supervision without the Sobel gating
    CnnVitBem,  // + full Sobel-gated boundary module
    Full,       // + boundary injection stages in the decoder
};

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
    Variant variant = Variant::Full;
    BackboneConfig backbone;
    int64_t vit_dmodel = 64;
    int64_t heads = 4;
    int64_t classes = 1;  // 1 = binary (sigmoid); K >= 2 = K-channel softmax
    int boundary_width = 1;
    int64_t image_size = 256;  // square input side the model is built for
    int64_t vit_channels = 64;
    int64_t bem_channels = 32;
    int64_t decoder_channels = 32;

    void validate() const;
    /// Small widths for fast CPU experiments and tests.
    static ModelConfig tiny(int64_t image_size = 64, Variant v = Variant::Full);
};

/// Deep-supervision output: one logit map per decoder level (coarse to fine),
/// all bilinearly upsampled to input resolution, plus the boundary logits at
/// stride 4 for the variants that have a boundary head.
struct SegOutput {
    std::vector<Var> interior_logits;  // 3 heads, each (B,classes,H,W)
    Var boundary_logits;               // (B,1,H/4,W/4) or null
};

class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    SegOutput forward(const Var& x, bool training);
    SegOutput forward(const Tensor& x, bool training);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    int64_t param_count(const std::string& prefix = "") const { return store_.param_count(prefix); }

    bool has_vit() const { return cfg_.variant != Variant::Cnn; }
    bool has_boundary_head() const {
        return cfg_.variant == Variant::CnnVitCbm || cfg_.variant == Variant::CnnVitBem ||
               cfg_.variant == Variant::Full;
    }
    bool has_injection() const { return cfg_.variant == Variant::Full; }

    const BoundaryEnhance* boundary_module() const { return bem_ ? &*bem_ : nullptr; }
    const LightVit* vit() const { return vit_ ? &*vit_ : nullptr; }

private:
    ModelConfig cfg_;
    ParamStore store_;
    std::optional<Backbone> backbone_;
    std::optional<LightVit> vit_;
    std::optional<BoundaryEnhance> bem_;
    std::optional<ConvBnRelu> bottleneck_;
    std::vector<BoundaryInject> inject_stages_;
    std::vector<PlainStage> plain_stages_;
    std::vector<Conv2d> heads_;
};

std::unique_ptr<Model> build_model(const ModelConfig& cfg, uint64_t seed);

}  // namespace bseg

#include "bseg/infer.hpp"

#include <cmath>
#include <filesystem>

#include "bseg/data.hpp"
#include "bseg/evaluate.hpp"

namespace bseg {

namespace {

std::string sibling_path(const std::string& out_path, const std::string& suffix) {
    std::filesystem::path p(out_path);
    return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

}  // namespace

void run_inference(Model& model, const std::string& image_path, const std::string& out_path,
                   const InferOptions& opts) {
    const int64_t size = model.config().image_size;
    Tensor image = load_image_rgb(image_path, size);
    Mask pred = predict_mask(model, image);
    write_mask_png(out_path, pred);

    if (opts.boundary) {
        if (!model.has_boundary_head())
            throw ConfigError("infer: variant '" + to_string(model.config().variant) +
                              "' has no boundary head");
        SegOutput out = model.forward(image.reshaped({1, 3, size, size}), /*training=*/false);
        Var prob = ops::sigmoid(out.boundary_logits);
        Var up = ops::resize_bilinear(prob, size, size);
        Mask gray(size, size);
        for (int64_t i = 0; i < size * size; ++i)
            gray.v[static_cast<size_t>(i)] = static_cast<int32_t>(up->value[i] * 255.0 + 0.5);
        write_mask_png(sibling_path(out_path, "_boundary"), gray);
    }

    if (opts.overlay) {
        Tensor overlay = image;
        const Mask contour = boundary_from_mask(pred, 1);
        const int64_t hw = size * size;
        for (int64_t i = 0; i < hw; ++i) {
            if (contour.v[static_cast<size_t>(i)] == 0) continue;
            overlay[0 * hw + i] = 1.0;  // red contour
            overlay[1 * hw + i] = 0.0;
            overlay[2 * hw + i] = 0.0;
        }
        write_image_png(sibling_path(out_path, "_overlay"), overlay);
    }
}

}  // namespace bseg

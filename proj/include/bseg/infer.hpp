#pragma once

#include <string>

#include "bseg/model.hpp"

namespace bseg {

struct InferOptions {
    bool boundary = false;  // also write the boundary-probability map
    bool overlay = false;   // also write the input with the predicted contour
};

/// Reads an image (grayscale replicated to 3 channels), resizes it to the
/// model's configured input size, predicts, and writes the label mask PNG to
/// `out_path`. Optional extras land next to it as `<stem>_boundary.png` and
/// `<stem>_overlay.png`.
void run_inference(Model& model, const std::string& image_path, const std::string& out_path,
                   const InferOptions& opts);

}  // namespace bseg

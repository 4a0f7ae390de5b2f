#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bseg/data.hpp"
#include "bseg/model.hpp"

namespace bseg {

struct EvalReport {
    int64_t n = 0;
    double mean_dice = 0.0;
    double mean_iou = 0.0;
    double mean_pq = 0.0;
    std::optional<double> mean_hd;  // over images where HD is defined
    int64_t hd_missing = 0;
    std::vector<ImageMetrics> per_image;
};

/// Eval-mode prediction for one (3,H,W) image: binary tasks threshold the
/// finest head at sigmoid >= 0.5, multi-class tasks take the channel argmax.
Mask predict_mask(Model& model, const Tensor& image);

/// Dice/IoU/HD/PQ of one prediction against ground truth (PQ on 4-connected
/// components; HD left missing when undefined).
ImageMetrics compute_image_metrics(const Mask& pred, const std::string& id, const Mask& gt);

/// Deterministic per-image Dice/IoU/HD/PQ (PQ over 4-connected components).
/// Undefined HD (an empty mask) is recorded as missing, not an error.
/// Throws DataError on an empty dataset.
EvalReport evaluate_model(Model& model, const std::vector<Sample>& data);

void write_metrics_json(const std::string& path, const EvalReport& report);
void write_per_image_csv(const std::string& path, const EvalReport& report);
std::string summary_line(const EvalReport& report);

}  // namespace bseg

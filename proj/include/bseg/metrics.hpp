#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bseg/errors.hpp"

namespace bseg {

/// Integer label/instance map, row-major.
struct Mask {
    int64_t h = 0, w = 0;
    std::vector<int32_t> v;

    Mask() = default;
    Mask(int64_t hh, int64_t ww) : h(hh), w(ww), v(static_cast<size_t>(hh * ww), 0) {}
    Mask(int64_t hh, int64_t ww, std::vector<int32_t> data) : h(hh), w(ww), v(std::move(data)) {}

    int32_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
    int32_t& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
    int64_t count_nonzero() const;
    bool same_size(const Mask& o) const { return h == o.h && w == o.w; }
};

/// Set-overlap Dice and IoU over the foreground (nonzero) pixels.
/// Both masks empty -> (1, 1) by convention.
std::pair<double, double> dice_iou(const Mask& pred, const Mask& gt);

/// Average Hausdorff distance: mean of the two directed mean nearest-neighbor
/// Euclidean distances between the foreground point sets. Exact pairwise
/// computation. Throws MetricError when either set is empty.
double avg_hausdorff(const Mask& pred, const Mask& gt);

struct PanopticResult {
    double pq = 0.0, dq = 0.0, sq = 0.0;
    int64_t tp = 0, fp = 0, fn = 0;
    bool empty_pair = false;  // no instances on either side; pq reported as 1
};

/// Standard panoptic quality over instance id maps (0 = background):
/// instances matched at IoU > 0.5 (unique by construction, asserted),
/// PQ = sum of matched IoU / (TP + FP/2 + FN/2).
PanopticResult panoptic_quality(const Mask& pred, const Mask& gt);

/// 4-connectivity connected components of same-valued nonzero regions;
/// component ids are assigned in scan order starting at 1.
Mask connected_components(const Mask& labels);

struct ImageMetrics {
    std::string id;
    double dice = 0.0, iou = 0.0, pq = 0.0;
    std::optional<double> hd;  // missing when a mask is empty
};

}  // namespace bseg

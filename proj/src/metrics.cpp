#include "bseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>

namespace bseg {

namespace {

void check_sizes(const Mask& a, const Mask& b, const char* op) {
    if (!a.same_size(b))
        throw MetricError(std::string(op) + ": mask sizes differ: " + std::to_string(a.h) + "x" +
                          std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                          std::to_string(b.w));
}

}  // namespace

int64_t Mask::count_nonzero() const {
    int64_t n = 0;
    for (int32_t x : v) n += x != 0;
    return n;
}

std::pair<double, double> dice_iou(const Mask& pred, const Mask& gt) {
    check_sizes(pred, gt, "dice_iou");
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
        a += p;
        b += g;
        inter += p && g;
    }
    if (a == 0 && b == 0) return {1.0, 1.0};
    const int64_t uni = a + b - inter;
    const double dice = static_cast<double>(2 * inter) / static_cast<double>(a + b);
    const double iou = uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    return {dice, iou};
}

double avg_hausdorff(const Mask& pred, const Mask& gt) {
    check_sizes(pred, gt, "avg_hausdorff");
    std::vector<std::pair<int64_t, int64_t>> a, b;
    for (int64_t y = 0; y < pred.h; ++y)
        for (int64_t x = 0; x < pred.w; ++x) {
            if (pred.at(y, x) != 0) a.emplace_back(y, x);
            if (gt.at(y, x) != 0) b.emplace_back(y, x);
        }
    if (a.empty() || b.empty())
        throw MetricError("avg_hausdorff: undefined for an empty mask (pred " +
                          std::to_string(a.size()) + " px, gt " + std::to_string(b.size()) + " px)");
    auto directed = [](const auto& from, const auto& to) {
        double acc = 0.0;
        for (const auto& [fy, fx] : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [ty, tx] : to) {
                const double dy = static_cast<double>(fy - ty);
                const double dx = static_cast<double>(fx - tx);
                best = std::min(best, dy * dy + dx * dx);
            }
            acc += std::sqrt(best);
        }
        return acc / static_cast<double>(from.size());
    };
    return 0.5 * (directed(a, b) + directed(b, a));
}

PanopticResult panoptic_quality(const Mask& pred, const Mask& gt) {
    check_sizes(pred, gt, "panoptic_quality");
    std::map<int32_t, int64_t> pred_sz, gt_sz;
    std::map<std::pair<int32_t, int32_t>, int64_t> inter;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const int32_t p = pred.v[i], g = gt.v[i];
        if (p < 0 || g < 0) throw MetricError("panoptic_quality: instance ids must be >= 0");
        if (p > 0) ++pred_sz[p];
        if (g > 0) ++gt_sz[g];
        if (p > 0 && g > 0) ++inter[{p, g}];
    }
    PanopticResult r;
    if (pred_sz.empty() && gt_sz.empty()) {
        r.pq = r.dq = r.sq = 1.0;
        r.empty_pair = true;
        return r;
    }
    std::map<int32_t, bool> pred_matched, gt_matched;
    double iou_sum = 0.0;
    for (const auto& [key, ivol] : inter) {
        const auto [p, g] = key;
        const double uni = static_cast<double>(pred_sz[p] + gt_sz[g] - ivol);
        const double iou = static_cast<double>(ivol) / uni;
        if (iou > 0.5) {
            // IoU > 0.5 admits at most one partner per instance.
            if (pred_matched[p] || gt_matched[g])
                throw MetricError("panoptic_quality: non-unique match above IoU 0.5");
            pred_matched[p] = true;
            gt_matched[g] = true;
            iou_sum += iou;
            ++r.tp;
        }
    }
    r.fp = static_cast<int64_t>(pred_sz.size()) - r.tp;
    r.fn = static_cast<int64_t>(gt_sz.size()) - r.tp;
    const double denom = static_cast<double>(r.tp) + 0.5 * static_cast<double>(r.fp) +
                         0.5 * static_cast<double>(r.fn);
    r.dq = denom > 0.0 ? static_cast<double>(r.tp) / denom : 0.0;
    r.sq = r.tp > 0 ? iou_sum / static_cast<double>(r.tp) : 0.0;
    r.pq = denom > 0.0 ? iou_sum / denom : 0.0;
    return r;
}

Mask connected_components(const Mask& labels) {
    Mask out(labels.h, labels.w);
    int32_t next_id = 0;
    std::queue<std::pair<int64_t, int64_t>> frontier;
    for (int64_t y = 0; y < labels.h; ++y)
        for (int64_t x = 0; x < labels.w; ++x) {
            if (labels.at(y, x) == 0 || out.at(y, x) != 0) continue;
            const int32_t value = labels.at(y, x);
            ++next_id;
            out.at(y, x) = next_id;
            frontier.emplace(y, x);
            while (!frontier.empty()) {
                const auto [cy, cx] = frontier.front();
                frontier.pop();
                constexpr int64_t dy[4] = {-1, 1, 0, 0};
                constexpr int64_t dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int64_t ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || ny >= labels.h || nx < 0 || nx >= labels.w) continue;
                    if (out.at(ny, nx) != 0 || labels.at(ny, nx) != value) continue;
                    out.at(ny, nx) = next_id;
                    frontier.emplace(ny, nx);
                }
            }
        }
    return out;
}

}  // namespace bseg

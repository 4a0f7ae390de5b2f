#include "bseg/evaluate.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace bseg {

Mask predict_mask(Model& model, const Tensor& image) {
    check(image.ndim() == 3 && image.dim(0) == 3, "predict_mask: expects (3,H,W)");
    const int64_t H = image.dim(1), W = image.dim(2);
    SegOutput out = model.forward(image.reshaped({1, 3, H, W}), /*training=*/false);
    const Tensor& logits = out.interior_logits.back()->value;  // finest head
    Mask mask(H, W);
    const int64_t K = logits.dim(1);
    if (K == 1) {
        for (int64_t i = 0; i < H * W; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-logits[i]));
            mask.v[static_cast<size_t>(i)] = p >= 0.5 ? 1 : 0;
        }
    } else {
        for (int64_t i = 0; i < H * W; ++i) {
            int32_t best = 0;
            double best_v = logits[i];
            for (int64_t k = 1; k < K; ++k) {
                const double v = logits[k * H * W + i];
                if (v > best_v) {
                    best_v = v;
                    best = static_cast<int32_t>(k);
                }
            }
            mask.v[static_cast<size_t>(i)] = best;
        }
    }
    return mask;
}

ImageMetrics compute_image_metrics(const Mask& pred, const std::string& id, const Mask& gt) {
    ImageMetrics im;
    im.id = id;
    const auto [dice, iou] = dice_iou(pred, gt);
    im.dice = dice;
    im.iou = iou;
    try {
        im.hd = avg_hausdorff(pred, gt);
    } catch (const MetricError&) {
        im.hd = std::nullopt;  // surfaced as a missing value in the report
    }
    im.pq = panoptic_quality(connected_components(pred), connected_components(gt)).pq;
    return im;
}

EvalReport evaluate_model(Model& model, const std::vector<Sample>& data) {
    if (data.empty()) throw DataError("evaluate: empty dataset");
    EvalReport report;
    double dice_acc = 0.0, iou_acc = 0.0, pq_acc = 0.0, hd_acc = 0.0;
    int64_t hd_count = 0;
    for (const Sample& s : data) {
        ImageMetrics im = compute_image_metrics(predict_mask(model, s.image), s.id, s.mask);
        dice_acc += im.dice;
        iou_acc += im.iou;
        pq_acc += im.pq;
        if (im.hd) {
            hd_acc += *im.hd;
            ++hd_count;
        }
        report.per_image.push_back(std::move(im));
    }
    report.n = static_cast<int64_t>(data.size());
    const double inv = 1.0 / static_cast<double>(report.n);
    report.mean_dice = dice_acc * inv;
    report.mean_iou = iou_acc * inv;
    report.mean_pq = pq_acc * inv;
    report.hd_missing = report.n - hd_count;
    if (hd_count > 0) report.mean_hd = hd_acc / static_cast<double>(hd_count);
    return report;
}

void write_metrics_json(const std::string& path, const EvalReport& report) {
    nlohmann::json j{{"n_images", report.n},
                     {"mean_dice", report.mean_dice},
                     {"mean_iou", report.mean_iou},
                     {"mean_pq", report.mean_pq},
                     {"hd_definition", "average_hausdorff"},
                     {"hd_missing", report.hd_missing}};
    if (report.mean_hd)
        j["mean_hd"] = *report.mean_hd;
    else
        j["mean_hd"] = nullptr;
    std::ofstream os(path);
    if (!os) throw DataError("cannot write metrics json: " + path);
    os << j.dump(2) << "\n";
}

void write_per_image_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write per-image csv: " + path);
    os << "id,dice,iou,hd,pq\n" << std::setprecision(17);
    for (const ImageMetrics& im : report.per_image) {
        os << im.id << "," << im.dice << "," << im.iou << ",";
        if (im.hd) os << *im.hd;
        os << "," << im.pq << "\n";
    }
}

std::string summary_line(const EvalReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "n=" << report.n << " dice=" << report.mean_dice << " iou=" << report.mean_iou;
    if (report.mean_hd)
        os << " hd=" << *report.mean_hd;
    else
        os << " hd=n/a";
    if (report.hd_missing > 0) os << " (hd missing on " << report.hd_missing << ")";
    os << " pq=" << report.mean_pq;
    return os.str();
}

}  // namespace bseg

#include "bseg/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

namespace bseg {

namespace fs = std::filesystem;

Mask boundary_from_mask(const Mask& mask, int width) {
    check(width >= 1, "boundary_from_mask: width must be >= 1");
    Mask out(mask.h, mask.w);
    constexpr int64_t dy[4] = {-1, 1, 0, 0};
    constexpr int64_t dx[4] = {0, 0, -1, 1};
    for (int64_t y = 0; y < mask.h; ++y)
        for (int64_t x = 0; x < mask.w; ++x) {
            const int32_t label = mask.at(y, x);
            if (label == 0) continue;
            for (int k = 0; k < 4; ++k) {
                const int64_t ny = y + dy[k], nx = x + dx[k];
                if (ny < 0 || ny >= mask.h || nx < 0 || nx >= mask.w) continue;
                if (mask.at(ny, nx) != label) {
                    out.at(y, x) = 1;
                    break;
                }
            }
        }
    for (int step = 1; step < width; ++step) {
        Mask grown = out;
        for (int64_t y = 0; y < out.h; ++y)
            for (int64_t x = 0; x < out.w; ++x) {
                if (out.at(y, x) == 0) continue;
                for (int k = 0; k < 4; ++k) {
                    const int64_t ny = y + dy[k], nx = x + dx[k];
                    if (ny >= 0 && ny < out.h && nx >= 0 && nx < out.w) grown.at(ny, nx) = 1;
                }
            }
        out = std::move(grown);
    }
    return out;
}

DatasetManifest scan_dataset(const std::string& root) {
    const fs::path images = fs::path(root) / "images";
    const fs::path masks = fs::path(root) / "masks";
    if (!fs::is_directory(images)) throw DataError("dataset: missing directory " + images.string());
    if (!fs::is_directory(masks)) throw DataError("dataset: missing directory " + masks.string());

    std::set<std::string> image_stems, mask_stems;
    for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".png")
            image_stems.insert(e.path().stem().string());
    for (const auto& e : fs::directory_iterator(masks))
        if (e.is_regular_file() && e.path().extension() == ".png")
            mask_stems.insert(e.path().stem().string());

    DatasetManifest m;
    m.root = root;
    for (const std::string& stem : image_stems) {
        if (!mask_stems.count(stem)) throw DataError("dataset: missing pair for '" + stem + "' (no mask)");
        m.pairs.push_back({stem, (images / (stem + ".png")).string(), (masks / (stem + ".png")).string()});
    }
    for (const std::string& stem : mask_stems)
        if (!image_stems.count(stem))
            throw DataError("dataset: missing pair for '" + stem + "' (no image)");
    return m;  // std::set iteration is already lexicographic
}

namespace {

Tensor mat_to_tensor_rgb(const cv::Mat& bgr) {
    Tensor t({3, bgr.rows, bgr.cols});
    const int64_t hw = static_cast<int64_t>(bgr.rows) * bgr.cols;
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const cv::Vec3b px = bgr.at<cv::Vec3b>(y, x);
            const int64_t i = static_cast<int64_t>(y) * bgr.cols + x;
            t[0 * hw + i] = px[2] / 255.0;  // R
            t[1 * hw + i] = px[1] / 255.0;  // G
            t[2 * hw + i] = px[0] / 255.0;  // B
        }
    return t;
}

cv::Mat resize_if_needed(const cv::Mat& src, int64_t size, int interp) {
    if (size <= 0 || (src.rows == size && src.cols == size)) return src;
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, interp);
    return dst;
}

}  // namespace

Tensor load_image_rgb(const std::string& path, int64_t size) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);  // grayscale replicates to 3 channels
    if (img.empty()) throw DataError("unreadable image file: " + path);
    return mat_to_tensor_rgb(resize_if_needed(img, size, cv::INTER_LINEAR));
}

Sample load_pair(const ManifestEntry& entry, int64_t size, int boundary_width) {
    cv::Mat img = cv::imread(entry.image_path, cv::IMREAD_COLOR);
    if (img.empty()) throw DataError("unreadable image file: " + entry.image_path);
    cv::Mat msk = cv::imread(entry.mask_path, cv::IMREAD_GRAYSCALE);
    if (msk.empty()) throw DataError("unreadable mask file: " + entry.mask_path);
    if (img.rows != msk.rows || img.cols != msk.cols)
        throw DataError("size mismatch for '" + entry.id + "': image " + std::to_string(img.cols) +
                        "x" + std::to_string(img.rows) + " vs mask " + std::to_string(msk.cols) +
                        "x" + std::to_string(msk.rows));
    img = resize_if_needed(img, size, cv::INTER_LINEAR);
    msk = resize_if_needed(msk, size, cv::INTER_NEAREST);

    Sample s;
    s.id = entry.id;
    s.image = mat_to_tensor_rgb(img);
    s.mask = Mask(msk.rows, msk.cols);
    for (int y = 0; y < msk.rows; ++y)
        for (int x = 0; x < msk.cols; ++x) s.mask.at(y, x) = msk.at<uint8_t>(y, x);
    s.boundary = boundary_from_mask(s.mask, boundary_width);
    return s;
}

std::vector<Sample> load_dataset(const std::string& root, int64_t size, int boundary_width) {
    const DatasetManifest m = scan_dataset(root);
    std::vector<Sample> out;
    out.reserve(m.pairs.size());
    for (const ManifestEntry& e : m.pairs) out.push_back(load_pair(e, size, boundary_width));
    return out;
}

namespace {

// Distinct stream per (seed, index) so sample i is stable regardless of how
// many samples are drawn.
uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::vector<Sample> synth_dataset(int64_t n, int64_t size, uint64_t seed, int boundary_width) {
    check(n >= 1, "synth_dataset: n must be >= 1");
    check(size >= 32 && size % 32 == 0, "synth_dataset: size must be a positive multiple of 32");
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(i)));
        std::uniform_real_distribution<double> uni(0.0, 1.0);

        const double background = 0.15 + 0.15 * uni(rng);
        const int n_shapes = 1 + static_cast<int>(uni(rng) * 3.0 > 2.0) +
                             static_cast<int>(uni(rng) * 3.0 > 2.0);  // 1..3, biased to 1
        struct Ellipse {
            double cy, cx, a, b, cos_t, sin_t, intensity;
        };
        std::vector<Ellipse> shapes;
        for (int s = 0; s < n_shapes; ++s) {
            Ellipse e;
            e.cy = size * (0.25 + 0.5 * uni(rng));
            e.cx = size * (0.25 + 0.5 * uni(rng));
            e.a = size * (0.12 + 0.18 * uni(rng));
            e.b = size * (0.12 + 0.18 * uni(rng));
            const double theta = uni(rng) * 3.14159265358979323846;
            e.cos_t = std::cos(theta);
            e.sin_t = std::sin(theta);
            e.intensity = 0.65 + 0.25 * uni(rng);
            shapes.push_back(e);
        }

        Sample sample;
        sample.id = "synth_" + std::to_string(i);
        sample.image = Tensor({3, size, size});
        sample.mask = Mask(size, size);
        std::normal_distribution<double> noise(0.0, 0.03);
        const int64_t hw = size * size;
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                double value = background;
                bool inside = false;
                for (const Ellipse& e : shapes) {
                    const double ry = static_cast<double>(y) - e.cy;
                    const double rx = static_cast<double>(x) - e.cx;
                    const double u = (rx * e.cos_t + ry * e.sin_t) / e.a;
                    const double v = (-rx * e.sin_t + ry * e.cos_t) / e.b;
                    if (u * u + v * v <= 1.0) {
                        inside = true;
                        value = std::max(value, e.intensity);
                    }
                }
                if (inside) sample.mask.at(y, x) = 1;
                const int64_t idx = y * size + x;
                for (int64_t c = 0; c < 3; ++c) {
                    const double channel_tint = 1.0 - 0.05 * static_cast<double>(c);
                    const double px = value * channel_tint + noise(rng);
                    sample.image[c * hw + idx] = std::clamp(px, 0.0, 1.0);
                }
            }
        sample.boundary = boundary_from_mask(sample.mask, boundary_width);
        out.push_back(std::move(sample));
    }
    return out;
}

void write_mask_png(const std::string& path, const Mask& mask) {
    cv::Mat m(static_cast<int>(mask.h), static_cast<int>(mask.w), CV_8UC1);
    for (int64_t y = 0; y < mask.h; ++y)
        for (int64_t x = 0; x < mask.w; ++x)
            m.at<uint8_t>(static_cast<int>(y), static_cast<int>(x)) =
                static_cast<uint8_t>(std::clamp<int32_t>(mask.at(y, x), 0, 255));
    if (!cv::imwrite(path, m)) throw DataError("failed to write mask: " + path);
}

void write_image_png(const std::string& path, const Tensor& image) {
    check(image.ndim() == 3 && image.dim(0) == 3, "write_image_png: expects (3,H,W)");
    const int64_t h = image.dim(1), w = image.dim(2), hw = h * w;
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int64_t i = y * w + x;
            auto to8 = [&](int64_t c) {
                return static_cast<uint8_t>(std::clamp(image[c * hw + i], 0.0, 1.0) * 255.0 + 0.5);
            };
            m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x)) =
                cv::Vec3b(to8(2), to8(1), to8(0));  // BGR on disk
        }
    if (!cv::imwrite(path, m)) throw DataError("failed to write image: " + path);
}

Batch make_batch(const std::vector<Sample>& data, const std::vector<int64_t>& idxs) {
    check(!idxs.empty(), "make_batch: empty index list");
    const Sample& first = data[static_cast<size_t>(idxs[0])];
    const int64_t B = static_cast<int64_t>(idxs.size());
    const int64_t H = first.image.dim(1), W = first.image.dim(2);
    Batch batch{Tensor({B, 3, H, W}), Tensor({B, 1, H, W}), Tensor({B, 1, H, W})};
    for (int64_t b = 0; b < B; ++b) {
        const Sample& s = data[static_cast<size_t>(idxs[static_cast<size_t>(b)])];
        check(s.image.dim(1) == H && s.image.dim(2) == W, "make_batch: inconsistent sample sizes");
        for (int64_t i = 0; i < 3 * H * W; ++i) batch.images[b * 3 * H * W + i] = s.image[i];
        for (int64_t i = 0; i < H * W; ++i) {
            batch.labels[b * H * W + i] = static_cast<double>(s.mask.v[static_cast<size_t>(i)]);
            batch.boundaries[b * H * W + i] =
                static_cast<double>(s.boundary.v[static_cast<size_t>(i)]);
        }
    }
    return batch;
}

}  // namespace bseg

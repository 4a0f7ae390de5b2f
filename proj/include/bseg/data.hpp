#pragma once

#include <string>
#include <vector>

#include "bseg/metrics.hpp"
#include "bseg/tensor.hpp"

namespace bseg {

/// One training/eval example. `image` is (3,H,W) in [0,1]; `mask` holds class
/// labels (0 = background); `boundary` is the binary label-transition map.
struct Sample {
    std::string id;
    Tensor image;
    Mask mask;
    Mask boundary;
};

/// Foreground pixels whose 4-neighborhood (within the grid) contains a
/// different label, dilated (width-1) times with the same neighborhood.
Mask boundary_from_mask(const Mask& mask, int width = 1);

struct ManifestEntry {
    std::string id;
    std::string image_path;
    std::string mask_path;
};

/// Lexicographically ordered image/mask pairing of
/// `<root>/images/<id>.png` + `<root>/masks/<id>.png`.
struct DatasetManifest {
    std::string root;
    std::vector<ManifestEntry> pairs;
};

/// Scans the layout above. Throws DataError naming the stem when a mask is
/// missing, and for masks without a matching image.
DatasetManifest scan_dataset(const std::string& root);

/// Loads and preprocesses one pair: images resized bilinearly to size x size,
/// masks with nearest neighbor (no resampling at native size). Grayscale
/// images are replicated to 3 channels. Throws DataError for unreadable files
/// or image/mask dimension mismatches.
Sample load_pair(const ManifestEntry& entry, int64_t size, int boundary_width = 1);

/// scan + load; deterministic ordering by filename.
std::vector<Sample> load_dataset(const std::string& root, int64_t size, int boundary_width = 1);

/// Seeded generator of 1-3 soft-edged ellipse blobs over a noisy background;
/// masks are the union of the shapes, boundaries derived as above. The same
/// (n, size, seed) always produces bitwise-identical samples.
std::vector<Sample> synth_dataset(int64_t n, int64_t size, uint64_t seed, int boundary_width = 1);

/// PNG writers (8-bit; mask files store the raw label value per pixel).
void write_mask_png(const std::string& path, const Mask& mask);
void write_image_png(const std::string& path, const Tensor& image);

/// Reads an image as (3,H,W) in [0,1], resized to size x size when size > 0.
Tensor load_image_rgb(const std::string& path, int64_t size);

/// Stacked batch tensors for the samples at `idxs`: images (B,3,H,W),
/// labels and boundaries (B,1,H,W).
struct Batch {
    Tensor images;
    Tensor labels;
    Tensor boundaries;
};
Batch make_batch(const std::vector<Sample>& data, const std::vector<int64_t>& idxs);

}  // namespace bseg

#include "bseg/boundary.hpp"

namespace bseg {

namespace {

// (C,1,3,3) depthwise weight replicating a fixed 3x3 kernel.
Tensor depthwise_kernel(const std::array<double, 9>& k, int64_t channels) {
    Tensor w({channels, 1, 3, 3});
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t i = 0; i < 9; ++i) w[c * 9 + i] = k[static_cast<size_t>(i)];
    return w;
}

Tensor kernel_tensor(const std::array<double, 9>& k) {
    Tensor t({3, 3});
    for (int64_t i = 0; i < 9; ++i) t[i] = k[static_cast<size_t>(i)];
    return t;
}

}  // namespace

std::pair<Var, Var> sobel_gradients(const Var& f) {
    const Tensor& fv = f->value;
    check(fv.ndim() == 4, "sobel_gradients: expects (B,C,h,w)");
    if (fv.dim(2) < 3 || fv.dim(3) < 3)
        throw ShapeError("sobel_gradients: map must be at least 3x3, got " + shape_str(fv.shape()));
    const int64_t C = fv.dim(1);
    Var wx = make_constant(depthwise_kernel(kSobelX, C));
    Var wy = make_constant(depthwise_kernel(kSobelY, C));
    // Edge-replicated padding: a constant map has exactly zero gradient
    // everywhere, image borders are not treated as edges.
    Var padded = ops::replicate_pad2d(f, 1);
    Var mx = ops::conv2d(padded, wx, nullptr, 1, 0, static_cast<int>(C));
    Var my = ops::conv2d(padded, wy, nullptr, 1, 0, static_cast<int>(C));
    return {mx, my};
}

BoundaryEnhance::BoundaryEnhance(ParamStore& store, const std::string& prefix, int64_t c1,
                                 int64_t c4, int64_t width, bool use_sobel, std::mt19937_64& rng)
    : use_sobel_(use_sobel),
      gate1_(store, prefix + ".gate1", 2 * c1, c1, 1, 1, 0, rng),
      gate4_(store, prefix + ".gate4", 2 * c4, c4, 1, 1, 0, rng),
      reduce4_(store, prefix + ".reduce4", c4, width, 1, 1, 0, rng),
      match1_(store, prefix + ".match1", c1, width, 1, 1, 0, rng),
      match4_(store, prefix + ".match4", width, width, 1, 1, 0, rng),
      fuse1_(store, prefix + ".fuse1", 2 * width, width, 3, 1, 1, rng),
      fuse2_(store, prefix + ".fuse2", width, width, 3, 1, 1, rng),
      head_(store, prefix + ".head", width, 1, 1, 1, 0, rng) {
    if (use_sobel_) {
        kx_ = store.buffer(prefix + ".sobel.kx", kernel_tensor(kSobelX));
        ky_ = store.buffer(prefix + ".sobel.ky", kernel_tensor(kSobelY));
    }
}

Var BoundaryEnhance::edge_enhance(const Var& f, const Conv2d& gate_proj) const {
    Var mxy;
    if (use_sobel_) {
        // Rebuild the depthwise weights from the registered buffers so the
        // kernels in the checkpoint are authoritative.
        const int64_t C = f->value.dim(1);
        Tensor wx({C, 1, 3, 3}), wy({C, 1, 3, 3});
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < 9; ++i) {
                wx[c * 9 + i] = kx_->value[i];
                wy[c * 9 + i] = ky_->value[i];
            }
        // Replicate padding makes the gradient well-defined even for the tiny
        // stride-32 maps of small inputs (down to 1x1, where it is zero).
        Var padded = ops::replicate_pad2d(f, 1);
        Var mx = ops::conv2d(padded, make_constant(std::move(wx)), nullptr, 1, 0, static_cast<int>(C));
        Var my = ops::conv2d(padded, make_constant(std::move(wy)), nullptr, 1, 0, static_cast<int>(C));
        mxy = ops::concat_channels({mx, my});
    } else {
        mxy = ops::concat_channels({f, f});
    }
    Var gate = ops::sigmoid(gate_proj.forward(mxy));
    return ops::mul(f, gate);
}

BoundaryFeature BoundaryEnhance::forward(const Var& f1, const Var& f4, bool training) const {
    const Tensor& v1 = f1->value;
    const Tensor& v4 = f4->value;
    check(v1.ndim() == 4 && v4.ndim() == 4, "boundary module: expects (B,C,h,w) inputs");
    if (v4.dim(2) * 8 != v1.dim(2) || v4.dim(3) * 8 != v1.dim(3))
        throw ShapeError("boundary module: stride-32 map must be 1/8 the stride-4 map, got " +
                         shape_str(v1.shape()) + " and " + shape_str(v4.shape()));
    Var e1 = edge_enhance(f1, gate1_);
    Var e4 = edge_enhance(f4, gate4_);
    Var u4 = ops::resize_bilinear(reduce4_.forward(e4), v1.dim(2), v1.dim(3));
    Var m1 = match1_.forward(e1);
    Var m4 = match4_.forward(u4);
    Var fused = fuse2_.forward(fuse1_.forward(ops::concat_channels({m1, m4}), training), training);
    BoundaryFeature out;
    out.feature = fused;
    out.logits = head_.forward(fused);
    return out;
}

}  // namespace bseg

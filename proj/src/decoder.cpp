#include "bseg/decoder.hpp"

namespace bseg {

namespace {

Var upsample2x_to(const Var& fd_prev, const Tensor& ref) {
    const Tensor& pv = fd_prev->value;
    if (pv.dim(2) * 2 != ref.dim(2) || pv.dim(3) * 2 != ref.dim(3))
        throw ShapeError("decoder stage: previous feature must be half the skip resolution, got " +
                         shape_str(pv.shape()) + " for skip " + shape_str(ref.shape()));
    return ops::resize_bilinear(fd_prev, ref.dim(2), ref.dim(3));
}

}  // namespace

BoundaryInject::BoundaryInject(ParamStore& store, const std::string& prefix, int64_t fb_ch,
                               int64_t skip_ch, int64_t dec_ch, std::mt19937_64& rng)
    : att_(store, prefix + ".att", dec_ch, 1, 1, 1, 0, rng),
      fg1_(store, prefix + ".fg1", fb_ch + skip_ch + dec_ch, dec_ch, 3, 1, 1, rng),
      fg2_(store, prefix + ".fg2", dec_ch, dec_ch, 3, 1, 1, rng),
      bg1_(store, prefix + ".bg1", skip_ch, dec_ch, 3, 1, 1, rng),
      bg2_(store, prefix + ".bg2", dec_ch, dec_ch, 3, 1, 1, rng),
      bg3_(store, prefix + ".bg3", dec_ch, dec_ch, 3, 1, 1, rng),
      fuse_(store, prefix + ".fuse", 3 * dec_ch, dec_ch, 3, 1, 1, rng) {}

Var BoundaryInject::foreground_attention(const Var& fd_up) const {
    return ops::sigmoid(att_.forward(fd_up));
}

Var BoundaryInject::background_path(const Var& fc, const Var& fd_up, bool training) const {
    Var bg_gate = ops::rsub_scalar(1.0, foreground_attention(fd_up));
    Var bg_in = ops::mul_channel_gate(fc, bg_gate);
    return bg3_.forward(bg2_.forward(bg1_.forward(bg_in, training), training), training);
}

Var BoundaryInject::forward(const Var& fb, const Var& fc, const Var& fd_prev, bool training) const {
    const Tensor& cv = fc->value;
    if (fb->value.dim(2) != cv.dim(2) || fb->value.dim(3) != cv.dim(3))
        throw ShapeError("boundary inject: fb must arrive at the skip resolution, got " +
                         shape_str(fb->value.shape()) + " vs " + shape_str(cv.shape()));
    Var fd_up = upsample2x_to(fd_prev, cv);
    Var fg = fg2_.forward(fg1_.forward(ops::concat_channels({fb, fc, fd_up}), training), training);
    Var bg = background_path(fc, fd_up, training);
    return fuse_.forward(ops::concat_channels({fg, bg, fd_up}), training);
}

PlainStage::PlainStage(ParamStore& store, const std::string& prefix, int64_t skip_ch,
                       int64_t dec_ch, std::mt19937_64& rng)
    : s1_(store, prefix + ".s1", skip_ch + dec_ch, dec_ch, 3, 1, 1, rng),
      s2_(store, prefix + ".s2", dec_ch, dec_ch, 3, 1, 1, rng) {}

Var PlainStage::forward(const Var& fc, const Var& fd_prev, bool training) const {
    Var fd_up = upsample2x_to(fd_prev, fc->value);
    return s2_.forward(s1_.forward(ops::concat_channels({fc, fd_up}), training), training);
}

}  // namespace bseg

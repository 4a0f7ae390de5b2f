#include "bseg/light_vit.hpp"

#include <cmath>

namespace bseg {

MhsaResult mhsa(const Var& tokens, const Linear& wq, const Linear& wk, const Linear& wv,
                const Linear& wo, int64_t heads) {
    const Tensor& tv = tokens->value;
    check(tv.ndim() == 3, "mhsa: tokens must be (B,N,d), got " + shape_str(tv.shape()));
    const int64_t B = tv.dim(0), N = tv.dim(1), d = tv.dim(2);
    if (d % heads != 0)
        throw ShapeError("mhsa: heads (" + std::to_string(heads) + ") must divide d_model (" +
                         std::to_string(d) + ")");
    const int64_t dk = d / heads;
    auto split = [&](const Var& x) {
        return ops::permute(ops::reshape(x, {B, N, heads, dk}), {0, 2, 1, 3});  // (B,h,N,dk)
    };
    Var q = split(wq.forward(tokens));
    Var k = split(wk.forward(tokens));
    Var v = split(wv.forward(tokens));
    Var scores = ops::mul_scalar(ops::bmm(q, ops::transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
    Var attn = ops::softmax_lastdim(scores);                       // (B,h,N,N)
    Var ctx = ops::permute(ops::bmm(attn, v), {0, 2, 1, 3});       // (B,N,h,dk)
    Var out = wo.forward(ops::reshape(ctx, {B, N, d}));
    return {out, attn};
}

Var tokens_to_map(const Var& tokens, int64_t rows, int64_t cols) {
    const Tensor& tv = tokens->value;
    check(tv.ndim() == 3 && tv.dim(1) == rows * cols,
          "tokens_to_map: token count does not match grid " + std::to_string(rows) + "x" +
              std::to_string(cols));
    const int64_t B = tv.dim(0), d = tv.dim(2);
    return ops::reshape(ops::permute(tokens, {0, 2, 1}), {B, d, rows, cols});
}

Var map_to_tokens(const Var& map) {
    const Tensor& mv = map->value;
    check(mv.ndim() == 4, "map_to_tokens: expects (B,d,rows,cols)");
    const int64_t B = mv.dim(0), d = mv.dim(1), N = mv.dim(2) * mv.dim(3);
    return ops::permute(ops::reshape(map, {B, d, N}), {0, 2, 1});
}

TransformerBranch::TransformerBranch(ParamStore& store, const std::string& name, int64_t cin,
                                     int64_t in_h, int64_t in_w, int64_t patch,
                                     const LightVitConfig& cfg, std::mt19937_64& rng)
    : patch_(patch),
      rows_(in_h / patch),
      cols_(in_w / patch),
      heads_(cfg.heads),
      embed_(store, name + ".embed", cin, cfg.d_model, static_cast<int>(patch),
             static_cast<int>(patch), 0, rng),
      pos_(store.param(name + ".pos", Tensor::zeros({1, (in_h / patch) * (in_w / patch), cfg.d_model}))),
      ln1_(store, name + ".ln1", cfg.d_model),
      ln2_(store, name + ".ln2", cfg.d_model),
      wq_(store, name + ".wq", cfg.d_model, cfg.d_model, rng),
      wk_(store, name + ".wk", cfg.d_model, cfg.d_model, rng),
      wv_(store, name + ".wv", cfg.d_model, cfg.d_model, rng),
      wo_(store, name + ".wo", cfg.d_model, cfg.d_model, rng),
      ffn1_(store, name + ".ffn1", cfg.d_model, cfg.ffn_hidden(), rng),
      ffn2_(store, name + ".ffn2", cfg.ffn_hidden(), cfg.d_model, rng) {
    if (patch < 1 || in_h % patch != 0 || in_w % patch != 0)
        throw ConfigError("transformer branch: patch size " + std::to_string(patch) +
                          " must divide the input map " + std::to_string(in_h) + "x" +
                          std::to_string(in_w));
    if (cfg.d_model % cfg.heads != 0)
        throw ConfigError("transformer branch: heads must divide d_model");
}

PatchTokens TransformerBranch::patchify(const Var& f) const {
    const Tensor& fv = f->value;
    check(fv.ndim() == 4, "patchify: expects (B,C,h,w)");
    if (fv.dim(2) % patch_ != 0 || fv.dim(3) % patch_ != 0)
        throw ShapeError("patchify: patch size " + std::to_string(patch_) +
                         " does not divide map " + shape_str(fv.shape()));
    check(fv.dim(2) / patch_ == rows_ && fv.dim(3) / patch_ == cols_,
          "patchify: map size does not match the grid this branch was built for");
    Var grid = embed_.forward(f);  // (B,d,rows,cols); kernel=stride=patch
    PatchTokens out;
    out.tokens = ops::broadcast_add0(map_to_tokens(grid), pos_);
    out.patch = patch_;
    out.rows = rows_;
    out.cols = cols_;
    return out;
}

Var TransformerBranch::encode(const Var& tokens) const {
    Var a = ops::add(tokens, mhsa(ln1_.forward(tokens), wq_, wk_, wv_, wo_, heads_).tokens);
    Var ff = ffn2_.forward(ops::relu(ffn1_.forward(ln2_.forward(a))));
    return ops::add(a, ff);
}

Var TransformerBranch::forward(const Var& f) const {
    PatchTokens toks = patchify(f);
    Var enc = encode(toks.tokens);
    Var map = tokens_to_map(enc, rows_, cols_);
    return ops::resize_bilinear(map, f->value.dim(2), f->value.dim(3));
}

std::array<int64_t, 4> LightVit::patch_sizes(int64_t h) {
    if (h % 16 != 0)
        throw ConfigError("lightvit: stride-4 map side must be divisible by 16, got " +
                          std::to_string(h));
    return {h / 16, h / 8, h / 4, h / 2};
}

LightVit::LightVit(ParamStore& store, const std::string& prefix, int64_t cin, int64_t in_h,
                   int64_t in_w, const LightVitConfig& cfg, std::mt19937_64& rng) {
    const auto ps = patch_sizes(in_h);
    for (int i = 0; i < 4; ++i)
        branches_.emplace_back(store, prefix + ".branch" + std::to_string(i), cin, in_h, in_w,
                               ps[static_cast<size_t>(i)], cfg, rng);
    fuse_.emplace(store, prefix + ".fuse", 4 * cfg.d_model, cfg.out_channels, 3, 1, 1, rng,
                  /*bias=*/false);
}

Var LightVit::forward(const Var& f1) const {
    std::vector<Var> maps;
    maps.reserve(branches_.size());
    for (const TransformerBranch& b : branches_) maps.push_back(b.forward(f1));
    return fuse_->forward(ops::concat_channels(maps));
}

}  // namespace bseg

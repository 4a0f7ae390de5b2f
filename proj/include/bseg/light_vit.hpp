#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "bseg/layers.hpp"

namespace bseg {

/// Token array produced by patch embedding: (B, N, d_model) with its grid.
struct PatchTokens {
    Var tokens;
    int64_t patch = 0;
    int64_t rows = 0, cols = 0;
    int64_t count() const { return rows * cols; }
};

struct MhsaResult {
    Var tokens;  // (B,N,d)
    Var attn;    // (B,heads,N,N), rows sum to 1
};

/// Scaled dot-product multi-head self-attention over (B,N,d) tokens.
/// d must be divisible by heads; scaling is 1/sqrt(d/heads).
MhsaResult mhsa(const Var& tokens, const Linear& wq, const Linear& wk, const Linear& wv,
                const Linear& wo, int64_t heads);

/// (B,N,d) tokens laid out row-major on their grid -> (B,d,rows,cols) map.
Var tokens_to_map(const Var& tokens, int64_t rows, int64_t cols);
/// Inverse of tokens_to_map.
Var map_to_tokens(const Var& map);

struct LightVitConfig {
    int64_t d_model = 64;
    int64_t heads = 4;
    int64_t out_channels = 64;
    int64_t ffn_hidden() const { return 2 * d_model; }
};

/// One patch-embedding + single-encoder-layer transformer over a fixed grid.
/// Pre-norm residual wiring: t + MHSA(LN(t)), then t + FFN(LN(t)).
class TransformerBranch {
public:
    TransformerBranch(ParamStore& store, const std::string& name, int64_t cin, int64_t in_h,
                      int64_t in_w, int64_t patch, const LightVitConfig& cfg, std::mt19937_64& rng);

    /// Linear patch embedding plus learned (zero-initialized) position embeddings.
    PatchTokens patchify(const Var& f) const;
    /// Tokens through the encoder layer, reshaped to the grid and bilinearly
    /// upsampled back to the input resolution: (B,d_model,in_h,in_w).
    Var forward(const Var& f) const;
    Var encode(const Var& tokens) const;  // encoder layer only

    int64_t patch_size() const { return patch_; }
    int64_t token_count() const { return rows_ * cols_; }
    const Conv2d& embed() const { return embed_; }
    const Var& pos() const { return pos_; }

    int64_t patch_, rows_, cols_, heads_;
    Conv2d embed_;
    Var pos_;
    LayerNorm ln1_, ln2_;
    Linear wq_, wk_, wv_, wo_, ffn1_, ffn2_;
};

/// Four parallel transformer branches over coarse-to-fine patchifications of
/// the stride-4 feature map, fused by channel concatenation + convolution.
/// Patch sizes are h/16, h/8, h/4, h/2 — i.e. {4,8,16,32} at the native
/// 256x256 input (stride-4 map of 64x64) — so the token grids are always
/// 16x16, 8x8, 4x4 and 2x2.
class LightVit {
public:
    LightVit(ParamStore& store, const std::string& prefix, int64_t cin, int64_t in_h, int64_t in_w,
             const LightVitConfig& cfg, std::mt19937_64& rng);
    Var forward(const Var& f1) const;

    static std::array<int64_t, 4> patch_sizes(int64_t h);
    const TransformerBranch& branch(int i) const { return branches_[static_cast<size_t>(i)]; }

private:
    std::vector<TransformerBranch> branches_;
    std::optional<Conv2d> fuse_;
};

}  // namespace bseg

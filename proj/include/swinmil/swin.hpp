#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "swinmil/ops.hpp"
#include "swinmil/tensor.hpp"

namespace swinmil {

/// Hierarchical shifted-window encoder configuration. Stage t (0-based)
/// operates on a (input/patch)/2^t token grid with embed_dim * 2^t channels.
struct EncoderConfig {
    Index patch_size = 4;
    Index in_channels = 1;
    Index embed_dim = 24;
    std::vector<Index> depths{2, 2, 2};
    std::vector<Index> num_heads{3, 6, 12};
    Index window_size = 2;
    double mlp_ratio = 4.0;
    bool use_relative_position_bias = true;
    double norm_eps = 1e-5;

    Index stages() const { return static_cast<Index>(depths.size()); }
    Index stage_dim(Index t) const { return embed_dim << t; }
    Index mlp_hidden(Index t) const {
        return static_cast<Index>(mlp_ratio * static_cast<double>(stage_dim(t)));
    }

    void validate() const {
        if (stages() < 2 || stages() > 4) {
            throw std::invalid_argument("EncoderConfig: depths must list 2-4 stages, got " +
                                        std::to_string(stages()));
        }
        if (num_heads.size() != depths.size()) {
            throw std::invalid_argument("EncoderConfig: num_heads lists " +
                                        std::to_string(num_heads.size()) + " stages, depths " +
                                        std::to_string(depths.size()));
        }
        if (patch_size < 1 || window_size < 1 || embed_dim < 1 || mlp_ratio <= 0) {
            throw std::invalid_argument("EncoderConfig: patch/window/dim/mlp_ratio must be positive");
        }
        for (Index t = 0; t < stages(); ++t) {
            if (depths[t] < 1) {
                throw std::invalid_argument("EncoderConfig: stage " + std::to_string(t + 1) +
                                            " has no blocks");
            }
            if (stage_dim(t) % num_heads[t] != 0) {
                throw std::invalid_argument("EncoderConfig: stage " + std::to_string(t + 1) +
                                            " dim " + std::to_string(stage_dim(t)) +
                                            " not divisible by " + std::to_string(num_heads[t]) +
                                            " heads");
            }
        }
    }
};

template <typename S>
struct BlockParams {
    Tensor<S> norm1_g, norm1_b;
    Tensor<S> qkv_w, qkv_b;    // [D, 3D], [3D]
    Tensor<S> proj_w, proj_b;  // [D, D], [D]
    Tensor<S> rel_bias;        // [(2*ws-1)^2, heads]; undefined when bias disabled
    Tensor<S> norm2_g, norm2_b;
    Tensor<S> mlp_w1, mlp_b1;  // [D, hidden], [hidden]
    Tensor<S> mlp_w2, mlp_b2;  // [hidden, D], [D]
};

template <typename S>
struct StageParams {
    // Patch merging into this stage; undefined tensors for stage 1.
    Tensor<S> merge_norm_g, merge_norm_b;  // [4*D_prev]
    Tensor<S> merge_w;                     // [4*D_prev, 2*D_prev]
    std::vector<BlockParams<S>> blocks;
};

template <typename S>
struct EncoderParams {
    Tensor<S> embed_w, embed_b;  // [p*p*ch, C], [C]
    std::vector<StageParams<S>> stages;
};

template <typename S>
using StageFeatures = std::vector<Tensor<S>>;

/// Window size actually used on a grid: windows never exceed the grid side,
/// and shifting is disabled once a single window covers the whole grid.
inline Index effective_window(Index grid, Index window) { return std::min(grid, window); }

namespace detail {

/// Additive mask blocking attention across the seams a cyclic shift
/// introduces: tokens of one shifted window may attend only if they came
/// from the same contiguous image region. Built once per geometry via the
/// usual band-labeling construction and cached. Shape [nW, T, T] with 0 or
/// -1e9 entries.
template <typename S>
std::shared_ptr<const std::vector<S>> shift_mask(Index h, Index w, Index ws, Index shift) {
    static std::map<std::tuple<Index, Index, Index, Index>, std::shared_ptr<const std::vector<S>>>
        cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto key = std::make_tuple(h, w, ws, shift);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    std::vector<int> region(static_cast<std::size_t>(h * w));
    int label = 0;
    const Index row_cuts[4] = {0, h - ws, h - shift, h};
    const Index col_cuts[4] = {0, w - ws, w - shift, w};
    for (int ri = 0; ri < 3; ++ri) {
        for (int ci = 0; ci < 3; ++ci) {
            for (Index i = row_cuts[ri]; i < row_cuts[ri + 1]; ++i) {
                for (Index j = col_cuts[ci]; j < col_cuts[ci + 1]; ++j) {
                    region[i * w + j] = label;
                }
            }
            ++label;
        }
    }
    const Index wx = w / ws, t = ws * ws;
    const Index n_windows = (h / ws) * wx;
    auto mask = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n_windows * t * t));
    for (Index win = 0; win < n_windows; ++win) {
        const Index wi = win / wx, wj = win % wx;
        for (Index a = 0; a < t; ++a) {
            const int ra = region[(wi * ws + a / ws) * w + (wj * ws + a % ws)];
            for (Index b = 0; b < t; ++b) {
                const int rb = region[(wi * ws + b / ws) * w + (wj * ws + b % ws)];
                (*mask)[(win * t + a) * t + b] = (ra == rb) ? S(0) : S(-1e9);
            }
        }
    }
    cache[key] = mask;
    return mask;
}

/// Relative position bias lookup indices for a ws x ws window into a table
/// laid out for table_ws (the configured window size): entry (a,b) addresses
/// row (dy + table_ws - 1) * (2*table_ws - 1) + (dx + table_ws - 1). When the
/// effective window is smaller than the configured one, this reads the
/// central sub-block of the table.
inline std::vector<Index> rel_bias_index(Index ws, Index table_ws) {
    const Index t = ws * ws;
    const Index span = 2 * table_ws - 1;
    std::vector<Index> idx(static_cast<std::size_t>(t * t));
    for (Index a = 0; a < t; ++a) {
        for (Index b = 0; b < t; ++b) {
            const Index dy = a / ws - b / ws + table_ws - 1;
            const Index dx = a % ws - b % ws + table_ws - 1;
            idx[a * t + b] = dy * span + dx;
        }
    }
    return idx;
}

}  // namespace detail

/// Per-window multi-head self-attention. `windows` is [nW, T, C]; `mask`,
/// when defined, is an additive [nW, T, T] tensor applied to every head.
template <typename S>
Tensor<S> window_attention(const Tensor<S>& windows, const BlockParams<S>& p, Index heads,
                           const Tensor<S>& mask = {}) {
    if (windows.rank() != 3) {
        throw std::invalid_argument("window_attention: expected [nW,T,C], got " +
                                    shape_str(windows.shape()));
    }
    const Index n_windows = windows.dim(0), t = windows.dim(1), c = windows.dim(2);
    if (heads < 1 || c % heads != 0) {
        throw std::invalid_argument("window_attention: " + std::to_string(c) +
                                    " channels not divisible by " + std::to_string(heads) +
                                    " heads");
    }
    const Index dh = c / heads;

    Tensor<S> qkv = add(matmul(reshape(windows, {n_windows * t, c}), p.qkv_w), p.qkv_b);
    Tensor<S> split = reshape(permute_axes(reshape(qkv, {n_windows, t, 3, heads, dh}),
                                           {2, 0, 3, 1, 4}),
                              {3, n_windows * heads, t, dh});
    Tensor<S> q = scale(slice_first(split, 0), S(1) / S(std::sqrt(static_cast<double>(dh))));
    Tensor<S> k = slice_first(split, 1);
    Tensor<S> v = slice_first(split, 2);

    Tensor<S> scores = reshape(matmul(q, permute_axes(k, {0, 2, 1})), {n_windows, heads, t, t});
    if (p.rel_bias.defined()) {
        const Index ws = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(t))));
        const Index span = static_cast<Index>(
            std::llround(std::sqrt(static_cast<double>(p.rel_bias.dim(0)))));
        const Index table_ws = (span + 1) / 2;
        if (ws * ws != t || span * span != p.rel_bias.dim(0) || ws > table_ws) {
            throw std::invalid_argument("window_attention: bias table " +
                                        shape_str(p.rel_bias.shape()) +
                                        " incompatible with window of " + std::to_string(t) +
                                        " tokens");
        }
        Tensor<S> bias = reshape(
            permute_axes(gather_rows(p.rel_bias, detail::rel_bias_index(ws, table_ws)), {1, 0}),
            {heads, t, t});
        scores = add(scores, bias);
    }
    if (mask.defined()) {
        if (mask.rank() != 3 || mask.dim(0) != n_windows || mask.dim(1) != t || mask.dim(2) != t) {
            throw std::invalid_argument("window_attention: mask " + shape_str(mask.shape()) +
                                        " does not match [nW,T,T]");
        }
        // Tile the per-window mask over heads; it is constant, so this stays
        // off the tape.
        Tensor<S> tiled(Shape{n_windows, heads, t, t});
        for (Index win = 0; win < n_windows; ++win) {
            for (Index hh = 0; hh < heads; ++hh) {
                std::copy_n(mask.data() + win * t * t, t * t,
                            tiled.data() + (win * heads + hh) * t * t);
            }
        }
        scores = add(scores, tiled);
    }
    Tensor<S> probs = softmax(scores, -1);
    Tensor<S> ctx = matmul(reshape(probs, {n_windows * heads, t, t}), v);
    Tensor<S> merged = reshape(permute_axes(reshape(ctx, {n_windows, heads, t, dh}),
                                            {0, 2, 1, 3}),
                               {n_windows * t, c});
    return reshape(add(matmul(merged, p.proj_w), p.proj_b), {n_windows, t, c});
}

/// One transformer block: x + (S)W-MSA(LN(x)), then + MLP(LN(.)).
/// `shift` > 0 rolls the grid before partitioning and applies the seam mask.
template <typename S>
Tensor<S> swin_block(const Tensor<S>& x, const BlockParams<S>& p, Index heads, Index ws,
                     Index shift, S norm_eps) {
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    Tensor<S> y = layer_norm(x, p.norm1_g, p.norm1_b, norm_eps);
    if (shift > 0) y = cyclic_shift(y, -shift, -shift);

    Tensor<S> mask;
    if (shift > 0) {
        auto m = detail::shift_mask<S>(h, w, ws, shift);
        const Index n_windows = (h / ws) * (w / ws);
        mask = Tensor<S>(Shape{n_windows, ws * ws, ws * ws}, std::vector<S>(*m));
    }
    Tensor<S> attn = window_attention(window_partition(y, ws), p, heads, mask);
    y = window_reverse(attn, h, w, ws);
    if (shift > 0) y = cyclic_shift(y, shift, shift);
    Tensor<S> mid = add(x, y);

    Tensor<S> z = layer_norm(mid, p.norm2_g, p.norm2_b, norm_eps);
    z = reshape(z, {h * w, c});
    z = gelu(add(matmul(z, p.mlp_w1), p.mlp_b1));
    z = add(matmul(z, p.mlp_w2), p.mlp_b2);
    return add(mid, reshape(z, {h, w, c}));
}

/// 4x4 patch flattening plus linear projection to embed_dim channels.
template <typename S>
Tensor<S> patch_embed(const Tensor<S>& image, const EncoderConfig& cfg,
                      const EncoderParams<S>& params) {
    if (image.rank() != 3 || image.dim(2) != cfg.in_channels) {
        throw std::invalid_argument("patch_embed: expected [H,W," +
                                    std::to_string(cfg.in_channels) + "], got " +
                                    shape_str(image.shape()));
    }
    const Index h = image.dim(0), w = image.dim(1), p = cfg.patch_size;
    if (h % p != 0 || w % p != 0) {
        throw std::invalid_argument("patch_embed: image " + std::to_string(h) + "x" +
                                    std::to_string(w) + " not divisible by patch size " +
                                    std::to_string(p));
    }
    Tensor<S> tokens = patchify(image, p);
    const Index gh = tokens.dim(0), gw = tokens.dim(1);
    Tensor<S> flat = reshape(tokens, {gh * gw, p * p * cfg.in_channels});
    return reshape(add(matmul(flat, params.embed_w), params.embed_b), {gh, gw, cfg.embed_dim});
}

/// 2x2 neighborhood concat, layer norm, linear 4C -> 2C.
template <typename S>
Tensor<S> patch_merging(const Tensor<S>& x, const StageParams<S>& p, S norm_eps) {
    Tensor<S> merged = merge_2x2(x);
    const Index gh = merged.dim(0), gw = merged.dim(1), c4 = merged.dim(2);
    Tensor<S> normed = layer_norm(merged, p.merge_norm_g, p.merge_norm_b, norm_eps);
    Tensor<S> out = matmul(reshape(normed, {gh * gw, c4}), p.merge_w);
    return reshape(out, {gh, gw, c4 / 2});
}

/// Validates the full divisibility ladder for an input of side `side`,
/// reporting the first failing constraint.
inline void validate_input_side(Index side, const EncoderConfig& cfg) {
    if (side % cfg.patch_size != 0) {
        throw std::invalid_argument("encode: input side " + std::to_string(side) +
                                    " not divisible by patch size " +
                                    std::to_string(cfg.patch_size));
    }
    Index grid = side / cfg.patch_size;
    for (Index t = 0; t < cfg.stages(); ++t) {
        if (t > 0) {
            if (grid % 2 != 0) {
                throw std::invalid_argument("encode: stage " + std::to_string(t + 1) +
                                            " cannot halve odd token grid " +
                                            std::to_string(grid));
            }
            grid /= 2;
        }
        const Index ws = effective_window(grid, cfg.window_size);
        if (grid % ws != 0) {
            throw std::invalid_argument("encode: stage " + std::to_string(t + 1) + " token grid " +
                                        std::to_string(grid) + "x" + std::to_string(grid) +
                                        " not divisible by window " + std::to_string(ws));
        }
    }
}

/// Runs all stages, returning the post-stage feature map of each:
/// (H/4, W/4, C), (H/8, W/8, 2C), (H/16, W/16, 4C) for the 3-stage default.
template <typename S>
StageFeatures<S> encode(const Tensor<S>& image, const EncoderConfig& cfg,
                        const EncoderParams<S>& params) {
    cfg.validate();
    if (image.rank() != 3 || image.dim(0) != image.dim(1)) {
        throw std::invalid_argument("encode: expected a square [H,H,ch] image, got " +
                                    shape_str(image.shape()));
    }
    validate_input_side(image.dim(0), cfg);

    StageFeatures<S> feats;
    Tensor<S> x = patch_embed(image, cfg, params);
    const S eps = static_cast<S>(cfg.norm_eps);
    for (Index t = 0; t < cfg.stages(); ++t) {
        if (t > 0) x = patch_merging(x, params.stages[t], eps);
        const Index grid = x.dim(0);
        const Index ws = effective_window(grid, cfg.window_size);
        for (Index i = 0; i < cfg.depths[t]; ++i) {
            const bool shifted = (i % 2 == 1);
            const Index shift = (shifted && ws < grid) ? ws / 2 : 0;
            x = swin_block(x, params.stages[t].blocks[i], cfg.num_heads[t], ws, shift, eps);
        }
        feats.push_back(x);
    }
    return feats;
}

}  // namespace swinmil

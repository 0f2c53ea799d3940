#pragma once

// Scalar reference implementations for the windowed-attention path: explicit
// loops over raw buffers, no tensor ops, no shared code with the library
// beyond parameter layout. Used by the unit tests and the acceptance suite.

#include <cmath>
#include <vector>

#include "swinmil/swin.hpp"
#include "swinmil/tensor.hpp"

namespace swinref {

using swinmil::Index;

struct BlockRef {
    Index c = 0, heads = 0, table_ws = 0, hidden = 0;
    std::vector<double> norm1_g, norm1_b;
    std::vector<double> qkv_w, qkv_b;   // [C, 3C] row-major; columns 0..C q, C..2C k, 2C..3C v
    std::vector<double> proj_w, proj_b;
    std::vector<double> rel_bias;       // [(2*table_ws-1)^2, heads]; empty = disabled
    std::vector<double> norm2_g, norm2_b;
    std::vector<double> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    double eps = 1e-5;

    template <typename S>
    static BlockRef from(const swinmil::BlockParams<S>& p, Index heads, Index table_ws,
                         double eps) {
        BlockRef r;
        auto cp = [](const swinmil::Tensor<S>& t) {
            return t.defined() ? std::vector<double>(t.values().begin(), t.values().end())
                               : std::vector<double>{};
        };
        r.c = p.qkv_w.dim(0);
        r.heads = heads;
        r.table_ws = table_ws;
        r.hidden = p.mlp_w1.defined() ? p.mlp_w1.dim(1) : 0;
        r.norm1_g = cp(p.norm1_g);
        r.norm1_b = cp(p.norm1_b);
        r.qkv_w = cp(p.qkv_w);
        r.qkv_b = cp(p.qkv_b);
        r.proj_w = cp(p.proj_w);
        r.proj_b = cp(p.proj_b);
        r.rel_bias = cp(p.rel_bias);
        r.norm2_g = cp(p.norm2_g);
        r.norm2_b = cp(p.norm2_b);
        r.mlp_w1 = cp(p.mlp_w1);
        r.mlp_b1 = cp(p.mlp_b1);
        r.mlp_w2 = cp(p.mlp_w2);
        r.mlp_b2 = cp(p.mlp_b2);
        r.eps = eps;
        return r;
    }
};

/// Dense attention over one window of t tokens ([t, C] flattened), with an
/// optional additive [t, t] mask.
inline std::vector<double> attention_window_ref(const std::vector<double>& xw, Index t,
                                                const BlockRef& p,
                                                const std::vector<double>& mask) {
    const Index c = p.c, heads = p.heads, dh = c / heads;
    const Index ws = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(t))));
    std::vector<double> ctx(static_cast<std::size_t>(t * c), 0.0);
    for (Index h = 0; h < heads; ++h) {
        std::vector<double> q(t * dh), k(t * dh), v(t * dh);
        for (Index a = 0; a < t; ++a) {
            for (Index d = 0; d < dh; ++d) {
                double sq = p.qkv_b[0 * c + h * dh + d];
                double sk = p.qkv_b[1 * c + h * dh + d];
                double sv = p.qkv_b[2 * c + h * dh + d];
                for (Index e = 0; e < c; ++e) {
                    const double xv = xw[a * c + e];
                    sq += xv * p.qkv_w[e * 3 * c + 0 * c + h * dh + d];
                    sk += xv * p.qkv_w[e * 3 * c + 1 * c + h * dh + d];
                    sv += xv * p.qkv_w[e * 3 * c + 2 * c + h * dh + d];
                }
                q[a * dh + d] = sq;
                k[a * dh + d] = sk;
                v[a * dh + d] = sv;
            }
        }
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> scores(t * t);
        for (Index a = 0; a < t; ++a) {
            for (Index b = 0; b < t; ++b) {
                double s = 0;
                for (Index d = 0; d < dh; ++d) s += q[a * dh + d] * k[b * dh + d];
                s *= inv_sqrt;
                if (!p.rel_bias.empty()) {
                    const Index dy = a / ws - b / ws + p.table_ws - 1;
                    const Index dx = a % ws - b % ws + p.table_ws - 1;
                    s += p.rel_bias[(dy * (2 * p.table_ws - 1) + dx) * heads + h];
                }
                if (!mask.empty()) s += mask[a * t + b];
                scores[a * t + b] = s;
            }
        }
        for (Index a = 0; a < t; ++a) {
            double mx = scores[a * t];
            for (Index b = 1; b < t; ++b) mx = std::max(mx, scores[a * t + b]);
            double denom = 0;
            for (Index b = 0; b < t; ++b) {
                scores[a * t + b] = std::exp(scores[a * t + b] - mx);
                denom += scores[a * t + b];
            }
            for (Index b = 0; b < t; ++b) scores[a * t + b] /= denom;
            for (Index d = 0; d < dh; ++d) {
                double s = 0;
                for (Index b = 0; b < t; ++b) s += scores[a * t + b] * v[b * dh + d];
                ctx[a * c + h * dh + d] = s;
            }
        }
    }
    std::vector<double> out(static_cast<std::size_t>(t * c));
    for (Index a = 0; a < t; ++a) {
        for (Index e = 0; e < c; ++e) {
            double s = p.proj_b[e];
            for (Index f = 0; f < c; ++f) s += ctx[a * c + f] * p.proj_w[f * c + e];
            out[a * c + e] = s;
        }
    }
    return out;
}

/// Seam mask from first principles: after rolling the grid by (-shift,
/// -shift), position (i, j) holds a token that wrapped around iff
/// i >= h - shift (rows) or j >= w - shift (cols). Two tokens in a window
/// may attend only when both wrap flags agree, i.e. they came from the same
/// contiguous image region. Returns [nW * T * T], 0 or -1e9.
inline std::vector<double> seam_mask_ref(Index h, Index w, Index ws, Index shift) {
    const Index wx = w / ws, t = ws * ws;
    const Index n_windows = (h / ws) * wx;
    std::vector<double> mask(static_cast<std::size_t>(n_windows * t * t));
    for (Index win = 0; win < n_windows; ++win) {
        const Index wi = win / wx, wj = win % wx;
        for (Index a = 0; a < t; ++a) {
            const Index ai = wi * ws + a / ws, aj = wj * ws + a % ws;
            const bool awr = ai >= h - shift, awc = aj >= w - shift;
            for (Index b = 0; b < t; ++b) {
                const Index bi = wi * ws + b / ws, bj = wj * ws + b % ws;
                const bool bwr = bi >= h - shift, bwc = bj >= w - shift;
                mask[(win * t + a) * t + b] = (awr == bwr && awc == bwc) ? 0.0 : -1e9;
            }
        }
    }
    return mask;
}

inline void layer_norm_ref(std::vector<double>& x, Index rows, Index c,
                           const std::vector<double>& g, const std::vector<double>& b,
                           double eps) {
    for (Index r = 0; r < rows; ++r) {
        double mu = 0;
        for (Index j = 0; j < c; ++j) mu += x[r * c + j];
        mu /= static_cast<double>(c);
        double var = 0;
        for (Index j = 0; j < c; ++j) {
            const double d = x[r * c + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (Index j = 0; j < c; ++j) x[r * c + j] = (x[r * c + j] - mu) * inv * g[j] + b[j];
    }
}

/// Full shifted-window block: explicit roll, per-window dense attention with
/// the wrap-flag seam mask, inverse roll, residuals, and a scalar MLP.
inline std::vector<double> swin_block_ref(const std::vector<double>& x, Index h, Index w,
                                          const BlockRef& p, Index ws, Index shift) {
    const Index c = p.c, t = ws * ws;
    const Index wx = w / ws;
    const Index n_windows = (h / ws) * wx;

    std::vector<double> y = x;
    layer_norm_ref(y, h * w, c, p.norm1_g, p.norm1_b, p.eps);

    // roll by (-shift, -shift): out[i][j] = in[(i+shift) mod h][(j+shift) mod w]
    if (shift > 0) {
        std::vector<double> rolled(y.size());
        for (Index i = 0; i < h; ++i) {
            for (Index j = 0; j < w; ++j) {
                const Index si = (i + shift) % h, sj = (j + shift) % w;
                for (Index e = 0; e < c; ++e) {
                    rolled[(i * w + j) * c + e] = y[(si * w + sj) * c + e];
                }
            }
        }
        y = std::move(rolled);
    }

    const std::vector<double> mask =
        shift > 0 ? seam_mask_ref(h, w, ws, shift) : std::vector<double>{};
    std::vector<double> attn(y.size());
    for (Index win = 0; win < n_windows; ++win) {
        const Index wi = win / wx, wj = win % wx;
        std::vector<double> xw(static_cast<std::size_t>(t * c));
        for (Index a = 0; a < t; ++a) {
            const Index i = wi * ws + a / ws, j = wj * ws + a % ws;
            for (Index e = 0; e < c; ++e) xw[a * c + e] = y[(i * w + j) * c + e];
        }
        const std::vector<double> win_mask =
            mask.empty() ? std::vector<double>{}
                         : std::vector<double>(mask.begin() + win * t * t,
                                               mask.begin() + (win + 1) * t * t);
        const std::vector<double> yw = attention_window_ref(xw, t, p, win_mask);
        for (Index a = 0; a < t; ++a) {
            const Index i = wi * ws + a / ws, j = wj * ws + a % ws;
            for (Index e = 0; e < c; ++e) attn[(i * w + j) * c + e] = yw[a * c + e];
        }
    }

    if (shift > 0) {
        std::vector<double> unrolled(attn.size());
        for (Index i = 0; i < h; ++i) {
            for (Index j = 0; j < w; ++j) {
                const Index si = ((i - shift) % h + h) % h, sj = ((j - shift) % w + w) % w;
                for (Index e = 0; e < c; ++e) {
                    unrolled[(i * w + j) * c + e] = attn[(si * w + sj) * c + e];
                }
            }
        }
        attn = std::move(unrolled);
    }

    std::vector<double> mid(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mid[i] = x[i] + attn[i];

    std::vector<double> z = mid;
    layer_norm_ref(z, h * w, c, p.norm2_g, p.norm2_b, p.eps);
    std::vector<double> out(mid);
    constexpr double kC0 = 0.7978845608028654, kC1 = 0.044715;
    for (Index r = 0; r < h * w; ++r) {
        std::vector<double> hid(static_cast<std::size_t>(p.hidden));
        for (Index j = 0; j < p.hidden; ++j) {
            double s = p.mlp_b1[j];
            for (Index e = 0; e < c; ++e) s += z[r * c + e] * p.mlp_w1[e * p.hidden + j];
            const double u = kC0 * (s + kC1 * s * s * s);
            hid[j] = 0.5 * s * (1.0 + std::tanh(u));
        }
        for (Index e = 0; e < c; ++e) {
            double s = p.mlp_b2[e];
            for (Index j = 0; j < p.hidden; ++j) s += hid[j] * p.mlp_w2[j * c + e];
            out[r * c + e] += s;
        }
    }
    return out;
}

}  // namespace swinref

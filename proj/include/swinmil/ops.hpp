#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "swinmil/tensor.hpp"

namespace swinmil {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C = A(M,K) * B(K,N), optionally accumulating into C.
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, Index m, Index k, Index n, bool acc) {
    Eigen::Map<const RowMat<S>> ma(a, m, k), mb(b, k, n);
    Eigen::Map<RowMat<S>> mc(c, m, n);
    if (acc) {
        mc.noalias() += ma * mb;
    } else {
        mc.noalias() = ma * mb;
    }
}

// C = A(M,K) * B(N,K)^T
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, Index m, Index k, Index n, bool acc) {
    Eigen::Map<const RowMat<S>> ma(a, m, k), mb(b, n, k);
    Eigen::Map<RowMat<S>> mc(c, m, n);
    if (acc) {
        mc.noalias() += ma * mb.transpose();
    } else {
        mc.noalias() = ma * mb.transpose();
    }
}

// C = A(K,M)^T * B(K,N)
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, Index m, Index k, Index n, bool acc) {
    Eigen::Map<const RowMat<S>> ma(a, k, m), mb(b, k, n);
    Eigen::Map<RowMat<S>> mc(c, m, n);
    if (acc) {
        mc.noalias() += ma.transpose() * mb;
    } else {
        mc.noalias() = ma.transpose() * mb;
    }
}

template <typename S>
bool tracing(const Tensor<S>& a) {
    return Tape<S>::active() != nullptr && a.requires_grad();
}

template <typename S>
bool tracing(const Tensor<S>& a, const Tensor<S>& b) {
    return Tape<S>::active() != nullptr && (a.requires_grad() || b.requires_grad());
}

// b must be a trailing sub-shape of a (equal shapes and scalars included).
template <typename S>
void require_suffix(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    bool ok = sb.size() <= sa.size();
    if (ok) {
        for (std::size_t i = 0; i < sb.size(); ++i) {
            if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i]) {
                ok = false;
                break;
            }
        }
    }
    if (!ok) {
        throw std::invalid_argument(std::string(op) + ": shape " + shape_str(sb) +
                                    " does not broadcast against " + shape_str(sa));
    }
}

// out[i] = x[map[i]]; map must be a bijection over x's elements.
template <typename S>
Tensor<S> permutation_op(const Tensor<S>& x, Shape out_shape, std::vector<Index> map) {
    Tensor<S> out(std::move(out_shape));
    const S* px = x.data();
    S* po = out.data();
    const Index n = out.size();
    for (Index i = 0; i < n; ++i) po[i] = px[map[i]];
    if (tracing(x)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, out, map = std::move(map)] {
            const std::vector<S>& g = out.grad();
            std::vector<S>& gx = x.grad();
            for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += g[i];
        });
    }
    return out;
}

// Elementwise unary op with pointwise derivative dy/dx supplied as values.
template <typename S, typename FwdFn, typename DerivFn>
Tensor<S> unary_pointwise(const Tensor<S>& x, FwdFn fwd, DerivFn deriv) {
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    const Index n = x.size();
    for (Index i = 0; i < n; ++i) po[i] = fwd(px[i]);
    if (tracing(x)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, out, deriv] {
            const std::vector<S>& g = out.grad();
            std::vector<S>& gx = x.grad();
            const S* px2 = x.data();
            const S* po2 = out.data();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(px2[i], po2[i]);
        });
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (b broadcasts as a trailing sub-shape of a)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_suffix(a, b, "add");
    Tensor<S> out(a.shape());
    const Index nb = b.size();
    const Index reps = a.size() / std::max<Index>(nb, 1);
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (Index r = 0; r < reps; ++r) {
        for (Index j = 0; j < nb; ++j) po[r * nb + j] = pa[r * nb + j] + pb[j];
    }
    if (detail::tracing(a, b)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([a, b, out, nb, reps] {
            const std::vector<S>& g = out.grad();
            if (a.requires_grad()) {
                std::vector<S>& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                std::vector<S>& gb = b.grad();
                for (Index r = 0; r < reps; ++r) {
                    for (Index j = 0; j < nb; ++j) gb[j] += g[r * nb + j];
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_suffix(a, b, "mul");
    Tensor<S> out(a.shape());
    const Index nb = b.size();
    const Index reps = a.size() / std::max<Index>(nb, 1);
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (Index r = 0; r < reps; ++r) {
        for (Index j = 0; j < nb; ++j) po[r * nb + j] = pa[r * nb + j] * pb[j];
    }
    if (detail::tracing(a, b)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([a, b, out, nb, reps] {
            const std::vector<S>& g = out.grad();
            const S* pa2 = a.data();
            const S* pb2 = b.data();
            if (a.requires_grad()) {
                std::vector<S>& ga = a.grad();
                for (Index r = 0; r < reps; ++r) {
                    for (Index j = 0; j < nb; ++j) ga[r * nb + j] += g[r * nb + j] * pb2[j];
                }
            }
            if (b.requires_grad()) {
                std::vector<S>& gb = b.grad();
                for (Index r = 0; r < reps; ++r) {
                    for (Index j = 0; j < nb; ++j) gb[j] += g[r * nb + j] * pa2[r * nb + j];
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    return detail::unary_pointwise(
        x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
    return detail::unary_pointwise(
        x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return add(a, scale(b, S(-1)));
}

/// Elementwise x^e for a constant exponent. Fractional exponents require
/// positive inputs (callers clamp first, as with log).
template <typename S>
Tensor<S> pow(const Tensor<S>& x, S e) {
    return detail::unary_pointwise(
        x, [e](S v) { return std::pow(v, e); },
        [e](S v, S) { return e * std::pow(v, e - S(1)); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
    const S* px = x.data();
    for (Index i = 0, n = x.size(); i < n; ++i) {
        if (!(px[i] > S(0))) {
            throw std::domain_error("log: non-positive input " + std::to_string(px[i]) +
                                    " at flat index " + std::to_string(i));
        }
    }
    return detail::unary_pointwise(
        x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

/// Clamp to [lo, hi]; gradient passes through wherever lo <= x <= hi.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
    return detail::unary_pointwise(
        x, [lo, hi](S v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](S v, S) { return (v >= lo && v <= hi) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    auto fwd = [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
    };
    return detail::unary_pointwise(x, fwd, [](S, S y) { return y * (S(1) - y); });
}

/// GELU, tanh approximation.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double kC0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kC1 = 0.044715;
    auto fwd = [](S v) {
        const S u = S(kC0) * (v + S(kC1) * v * v * v);
        return S(0.5) * v * (S(1) + std::tanh(u));
    };
    auto deriv = [](S v, S) {
        const S u = S(kC0) * (v + S(kC1) * v * v * v);
        const S t = std::tanh(u);
        const S du = S(kC0) * (S(1) + S(3) * S(kC1) * v * v);
        return S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du;
    };
    return detail::unary_pointwise(x, fwd, deriv);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    S acc = S(0);
    const S* px = x.data();
    for (Index i = 0, n = x.size(); i < n; ++i) acc += px[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (detail::tracing(x)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, out] {
            const S g = out.grad()[0];
            std::vector<S>& gx = x.grad();
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
    const Index n = x.size();
    S acc = S(0);
    const S* px = x.data();
    for (Index i = 0; i < n; ++i) acc += px[i];
    Tensor<S> out = Tensor<S>::scalar(acc / S(n));
    if (detail::tracing(x)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, out, n] {
            const S g = out.grad()[0] / S(n);
            std::vector<S>& gx = x.grad();
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
    if (numel(new_shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(new_shape));
    }
    Tensor<S> out(std::move(new_shape), x.values());
    if (detail::tracing(x)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, out] {
            const std::vector<S>& g = out.grad();
            std::vector<S>& gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> permute_axes(const Tensor<S>& x, const std::vector<Index>& perm) {
    const Index r = x.rank();
    if (static_cast<Index>(perm.size()) != r) {
        throw std::invalid_argument("permute_axes: permutation size " +
                                    std::to_string(perm.size()) + " vs rank " + std::to_string(r));
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.dim(perm[i]);
    const std::vector<Index> in_strides = row_major_strides(x.shape());
    const std::vector<Index> out_strides = row_major_strides(out_shape);
    std::vector<Index> map(static_cast<std::size_t>(x.size()));
    const Index n = x.size();
    for (Index o = 0; o < n; ++o) {
        Index rem = o, src = 0;
        for (Index k = 0; k < r; ++k) {
            const Index coord = rem / out_strides[k];
            rem -= coord * out_strides[k];
            src += coord * in_strides[perm[k]];
        }
        map[o] = src;
    }
    return detail::permutation_op(x, std::move(out_shape), std::move(map));
}

/// out = x[i, ...] for a constant leading index (result drops the first axis).
template <typename S>
Tensor<S> slice_first(const Tensor<S>& x, Index i) {
    if (x.rank() < 1 || i < 0 || i >= x.dim(0)) {
        throw std::invalid_argument("slice_first: index " + std::to_string(i) +
                                    " out of range for shape " + shape_str(x.shape()));
    }
    Shape out_shape(x.shape().begin() + 1, x.shape().end());
    const Index slab = numel(out_shape);
    Tensor<S> out(out_shape,
                  std::vector<S>(x.values().begin() + i * slab, x.values().begin() + (i + 1) * slab));
    if (detail::tracing(x)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, out, i, slab] {
            const std::vector<S>& g = out.grad();
            std::vector<S>& gx = x.grad();
            for (Index j = 0; j < slab; ++j) gx[i * slab + j] += g[j];
        });
    }
    return out;
}

/// out[n, :] = table[idx[n], :]; adjoint scatter-adds rows back.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& table, const std::vector<Index>& idx) {
    if (table.rank() != 2) {
        throw std::invalid_argument("gather_rows: table must be rank 2, got " +
                                    shape_str(table.shape()));
    }
    const Index rows = table.dim(0), cols = table.dim(1);
    for (Index i : idx) {
        if (i < 0 || i >= rows) {
            throw std::invalid_argument("gather_rows: row index " + std::to_string(i) +
                                        " out of range [0, " + std::to_string(rows) + ")");
        }
    }
    Tensor<S> out(Shape{static_cast<Index>(idx.size()), cols});
    const S* pt = table.data();
    S* po = out.data();
    for (std::size_t n = 0; n < idx.size(); ++n) {
        std::copy_n(pt + idx[n] * cols, cols, po + static_cast<Index>(n) * cols);
    }
    if (detail::tracing(table)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([table, out, idx, cols] {
            const std::vector<S>& g = out.grad();
            std::vector<S>& gt = table.grad();
            for (std::size_t n = 0; n < idx.size(); ++n) {
                for (Index c = 0; c < cols; ++c) {
                    gt[idx[n] * cols + c] += g[static_cast<Index>(n) * cols + c];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

/// matmul(a[.., M, K], b[.., K, N]) -> [.., M, N].
/// b is either rank 2 (applied to every leading slab of a) or has the same
/// leading dimensions as a.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    auto fail = [&](const char* why) {
        throw std::invalid_argument(std::string("matmul: ") + why + ": " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    };
    if (a.rank() < 2 || b.rank() < 2) fail("operands must have rank >= 2");
    const Index m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const Index kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (k != kb) fail("inner dimensions disagree");
    const bool shared_b = (b.rank() == 2);
    if (!shared_b) {
        if (a.rank() != b.rank()) fail("batch ranks disagree");
        for (Index i = 0; i + 2 < a.rank(); ++i) {
            if (a.dim(i) != b.dim(i)) fail("batch dimensions disagree");
        }
    }
    const Index batch = a.size() / (m * k);

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Tensor<S> out(out_shape);
    for (Index t = 0; t < batch; ++t) {
        detail::gemm_nn(a.data() + t * m * k, b.data() + (shared_b ? 0 : t * k * n),
                        out.data() + t * m * n, m, k, n, false);
    }
    if (detail::tracing(a, b)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([a, b, out, m, k, n, batch, shared_b] {
            const S* g = out.grad().data();
            for (Index t = 0; t < batch; ++t) {
                const S* gt = g + t * m * n;
                const S* pb = b.data() + (shared_b ? 0 : t * k * n);
                const S* pa = a.data() + t * m * k;
                if (a.requires_grad()) {
                    detail::gemm_nt(gt, pb, a.grad().data() + t * m * k, m, n, k, true);
                }
                if (b.requires_grad()) {
                    detail::gemm_tn(pa, gt, b.grad().data() + (shared_b ? 0 : t * k * n), k, m, n,
                                    true);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

/// Exp-normalization along `axis` (negative axes count from the end),
/// computed with max-subtraction.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, Index axis) {
    const Index r = x.rank();
    if (axis < -r || axis >= r) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " invalid for shape " + shape_str(x.shape()));
    }
    if (axis < 0) axis += r;
    const Index lanes = x.dim(axis);
    Index inner = 1;
    for (Index i = axis + 1; i < r; ++i) inner *= x.dim(i);
    const Index outer = x.size() / (lanes * inner);

    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
            const Index base = o * lanes * inner + in;
            S mx = px[base];
            for (Index l = 1; l < lanes; ++l) mx = std::max(mx, px[base + l * inner]);
            S denom = S(0);
            for (Index l = 0; l < lanes; ++l) {
                const S e = std::exp(px[base + l * inner] - mx);
                po[base + l * inner] = e;
                denom += e;
            }
            for (Index l = 0; l < lanes; ++l) po[base + l * inner] /= denom;
        }
    }
    if (detail::tracing(x)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, out, outer, lanes, inner] {
            const std::vector<S>& g = out.grad();
            const S* y = out.data();
            std::vector<S>& gx = x.grad();
            for (Index o = 0; o < outer; ++o) {
                for (Index in = 0; in < inner; ++in) {
                    const Index base = o * lanes * inner + in;
                    S dot = S(0);
                    for (Index l = 0; l < lanes; ++l) {
                        const Index at = base + l * inner;
                        dot += g[at] * y[at];
                    }
                    for (Index l = 0; l < lanes; ++l) {
                        const Index at = base + l * inner;
                        gx[at] += y[at] * (g[at] - dot);
                    }
                }
            }
        });
    }
    return out;
}

/// Per-position normalization over the last axis: (x - mean)/sqrt(var + eps)
/// * gamma + beta. Variance is the biased (1/C) estimate.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
    const Index c = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != c || beta.dim(0) != c) {
        throw std::invalid_argument("layer_norm: gamma " + shape_str(gamma.shape()) + ", beta " +
                                    shape_str(beta.shape()) + " must both be [" +
                                    std::to_string(c) + "]");
    }
    const Index rows = x.size() / c;
    Tensor<S> out(x.shape());
    std::vector<S> xhat(static_cast<std::size_t>(x.size()));
    std::vector<S> inv_std(static_cast<std::size_t>(rows));
    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pb = beta.data();
    S* po = out.data();
    for (Index row = 0; row < rows; ++row) {
        const S* xr = px + row * c;
        S mu = S(0);
        for (Index j = 0; j < c; ++j) mu += xr[j];
        mu /= S(c);
        S var = S(0);
        for (Index j = 0; j < c; ++j) {
            const S d = xr[j] - mu;
            var += d * d;
        }
        var /= S(c);
        const S inv = S(1) / std::sqrt(var + eps);
        inv_std[row] = inv;
        for (Index j = 0; j < c; ++j) {
            const S xh = (xr[j] - mu) * inv;
            xhat[row * c + j] = xh;
            po[row * c + j] = xh * pg[j] + pb[j];
        }
    }
    const bool trace = Tape<S>::active() != nullptr &&
                       (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    if (trace) {
        out.set_requires_grad(true);
        Tape<S>::active()->record(
            [x, gamma, beta, out, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                const std::vector<S>& g = out.grad();
                const S* pg2 = gamma.data();
                for (Index row = 0; row < rows; ++row) {
                    const S* gr = g.data() + row * c;
                    const S* xh = xhat.data() + row * c;
                    if (gamma.requires_grad()) {
                        std::vector<S>& gg = gamma.grad();
                        for (Index j = 0; j < c; ++j) gg[j] += gr[j] * xh[j];
                    }
                    if (beta.requires_grad()) {
                        std::vector<S>& gb = beta.grad();
                        for (Index j = 0; j < c; ++j) gb[j] += gr[j];
                    }
                    if (x.requires_grad()) {
                        S mean_gy = S(0), mean_gyxh = S(0);
                        for (Index j = 0; j < c; ++j) {
                            const S gy = gr[j] * pg2[j];
                            mean_gy += gy;
                            mean_gyxh += gy * xh[j];
                        }
                        mean_gy /= S(c);
                        mean_gyxh /= S(c);
                        std::vector<S>& gx = x.grad();
                        for (Index j = 0; j < c; ++j) {
                            const S gy = gr[j] * pg2[j];
                            gx[row * c + j] += inv_std[row] * (gy - mean_gy - xh[j] * mean_gyxh);
                        }
                    }
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// 1x1 convolution and bilinear upsampling
// ---------------------------------------------------------------------------

/// Per-pixel affine map over channels; equivalent to reshaping x to
/// (H*W, Cin) and right-multiplying by w, then adding b.
template <typename S>
Tensor<S> conv1x1(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.rank() != 3 || w.rank() != 2 || x.dim(2) != w.dim(0)) {
        throw std::invalid_argument("conv1x1: x " + shape_str(x.shape()) + " vs w " +
                                    shape_str(w.shape()) + " (channels must agree)");
    }
    const Index h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = w.dim(1);
    if (b.rank() != 1 || b.dim(0) != cout) {
        throw std::invalid_argument("conv1x1: bias " + shape_str(b.shape()) + " must be [" +
                                    std::to_string(cout) + "]");
    }
    const Index rows = h * wd;
    Tensor<S> out(Shape{h, wd, cout});
    detail::gemm_nn(x.data(), w.data(), out.data(), rows, cin, cout, false);
    S* po = out.data();
    const S* pb = b.data();
    for (Index r = 0; r < rows; ++r) {
        for (Index j = 0; j < cout; ++j) po[r * cout + j] += pb[j];
    }
    const bool trace = Tape<S>::active() != nullptr &&
                       (x.requires_grad() || w.requires_grad() || b.requires_grad());
    if (trace) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, w, b, out, rows, cin, cout] {
            const S* g = out.grad().data();
            if (x.requires_grad()) {
                detail::gemm_nt(g, w.data(), x.grad().data(), rows, cout, cin, true);
            }
            if (w.requires_grad()) {
                detail::gemm_tn(x.data(), g, w.grad().data(), cin, rows, cout, true);
            }
            if (b.requires_grad()) {
                std::vector<S>& gb = b.grad();
                for (Index r = 0; r < rows; ++r) {
                    for (Index j = 0; j < cout; ++j) gb[j] += g[r * cout + j];
                }
            }
        });
    }
    return out;
}

namespace detail {

struct LerpCoord {
    Index lo, hi;
    double t;
};

inline std::vector<LerpCoord> upsample_coords(Index src, Index dst) {
    std::vector<LerpCoord> coords(static_cast<std::size_t>(dst));
    const double ratio = static_cast<double>(src) / static_cast<double>(dst);
    for (Index d = 0; d < dst; ++d) {
        double s = (static_cast<double>(d) + 0.5) * ratio - 0.5;
        s = std::min(std::max(s, 0.0), static_cast<double>(src - 1));
        const Index lo = static_cast<Index>(std::floor(s));
        coords[d] = {lo, std::min<Index>(lo + 1, src - 1), s - static_cast<double>(lo)};
    }
    return coords;
}

}  // namespace detail

/// Align-corners-false bilinear resize of x[h,w,C] up to [H,W,C].
template <typename S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, Index out_h, Index out_w) {
    if (x.rank() != 3) {
        throw std::invalid_argument("bilinear_upsample: expected [h,w,C], got " +
                                    shape_str(x.shape()));
    }
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (out_h < h || out_w < w) {
        throw std::invalid_argument("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                                    std::to_string(out_w) + " smaller than source " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    const auto ys = detail::upsample_coords(h, out_h);
    const auto xs = detail::upsample_coords(w, out_w);
    Tensor<S> out(Shape{out_h, out_w, c});
    const S* px = x.data();
    S* po = out.data();
    for (Index i = 0; i < out_h; ++i) {
        const auto& yc = ys[i];
        const S ty = S(yc.t);
        for (Index j = 0; j < out_w; ++j) {
            const auto& xc = xs[j];
            const S tx = S(xc.t);
            const S w00 = (S(1) - ty) * (S(1) - tx), w01 = (S(1) - ty) * tx;
            const S w10 = ty * (S(1) - tx), w11 = ty * tx;
            const S* r0 = px + (yc.lo * w + xc.lo) * c;
            const S* r1 = px + (yc.lo * w + xc.hi) * c;
            const S* r2 = px + (yc.hi * w + xc.lo) * c;
            const S* r3 = px + (yc.hi * w + xc.hi) * c;
            S* dst = po + (i * out_w + j) * c;
            for (Index ch = 0; ch < c; ++ch) {
                dst[ch] = w00 * r0[ch] + w01 * r1[ch] + w10 * r2[ch] + w11 * r3[ch];
            }
        }
    }
    if (detail::tracing(x)) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([x, out, ys, xs, h, w, c, out_h, out_w] {
            (void)h;
            const std::vector<S>& g = out.grad();
            std::vector<S>& gx = x.grad();
            for (Index i = 0; i < out_h; ++i) {
                const auto& yc = ys[i];
                const S ty = S(yc.t);
                for (Index j = 0; j < out_w; ++j) {
                    const auto& xc = xs[j];
                    const S tx = S(xc.t);
                    const S* gp = g.data() + (i * out_w + j) * c;
                    for (Index ch = 0; ch < c; ++ch) {
                        const S gv = gp[ch];
                        gx[(yc.lo * w + xc.lo) * c + ch] += (S(1) - ty) * (S(1) - tx) * gv;
                        gx[(yc.lo * w + xc.hi) * c + ch] += (S(1) - ty) * tx * gv;
                        gx[(yc.hi * w + xc.lo) * c + ch] += ty * (S(1) - tx) * gv;
                        gx[(yc.hi * w + xc.hi) * c + ch] += ty * tx * gv;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Grid reorderings used by the encoder (all exact element permutations)
// ---------------------------------------------------------------------------

/// Torus roll: out(i,j,:) = x((i - dy) mod h, (j - dx) mod w, :).
template <typename S>
Tensor<S> cyclic_shift(const Tensor<S>& x, Index dy, Index dx) {
    if (x.rank() != 3) {
        throw std::invalid_argument("cyclic_shift: expected [h,w,C], got " + shape_str(x.shape()));
    }
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    auto wrap = [](Index v, Index m) { return ((v % m) + m) % m; };
    std::vector<Index> map(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < h; ++i) {
        const Index si = wrap(i - dy, h);
        for (Index j = 0; j < w; ++j) {
            const Index sj = wrap(j - dx, w);
            for (Index ch = 0; ch < c; ++ch) {
                map[(i * w + j) * c + ch] = (si * w + sj) * c + ch;
            }
        }
    }
    return detail::permutation_op(x, x.shape(), std::move(map));
}

/// Splits x[h,w,C] into non-overlapping ws x ws windows, row-major across
/// and within windows: out[nW, ws*ws, C].
template <typename S>
Tensor<S> window_partition(const Tensor<S>& x, Index ws) {
    if (x.rank() != 3) {
        throw std::invalid_argument("window_partition: expected [h,w,C], got " +
                                    shape_str(x.shape()));
    }
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (ws <= 0 || h % ws != 0 || w % ws != 0) {
        throw std::invalid_argument("window_partition: grid " + std::to_string(h) + "x" +
                                    std::to_string(w) + " not divisible by window " +
                                    std::to_string(ws));
    }
    const Index wx = w / ws;
    const Index n_windows = (h / ws) * wx;
    std::vector<Index> map(static_cast<std::size_t>(x.size()));
    for (Index win = 0; win < n_windows; ++win) {
        const Index wi = win / wx, wj = win % wx;
        for (Index t = 0; t < ws * ws; ++t) {
            const Index i = wi * ws + t / ws, j = wj * ws + t % ws;
            for (Index ch = 0; ch < c; ++ch) {
                map[(win * ws * ws + t) * c + ch] = (i * w + j) * c + ch;
            }
        }
    }
    return detail::permutation_op(x, Shape{n_windows, ws * ws, c}, std::move(map));
}

/// Inverse of window_partition.
template <typename S>
Tensor<S> window_reverse(const Tensor<S>& windows, Index h, Index w, Index ws) {
    if (windows.rank() != 3 || windows.dim(1) != ws * ws ||
        windows.dim(0) * ws * ws != h * w) {
        throw std::invalid_argument("window_reverse: windows " + shape_str(windows.shape()) +
                                    " do not tile a " + std::to_string(h) + "x" +
                                    std::to_string(w) + " grid with window " + std::to_string(ws));
    }
    const Index c = windows.dim(2);
    const Index wx = w / ws;
    std::vector<Index> map(static_cast<std::size_t>(windows.size()));
    for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
            const Index win = (i / ws) * wx + j / ws;
            const Index t = (i % ws) * ws + j % ws;
            for (Index ch = 0; ch < c; ++ch) {
                map[(i * w + j) * c + ch] = (win * ws * ws + t) * c + ch;
            }
        }
    }
    return detail::permutation_op(windows, Shape{h, w, c}, std::move(map));
}

/// Flattens each p x p patch of x[H,W,ch] into a token: out[H/p, W/p, p*p*ch]
/// with the patch unrolled row-major as (di, dj, channel).
template <typename S>
Tensor<S> patchify(const Tensor<S>& x, Index p) {
    if (x.rank() != 3) {
        throw std::invalid_argument("patchify: expected [H,W,ch], got " + shape_str(x.shape()));
    }
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (p <= 0 || h % p != 0 || w % p != 0) {
        throw std::invalid_argument("patchify: image " + std::to_string(h) + "x" +
                                    std::to_string(w) + " not divisible by patch size " +
                                    std::to_string(p));
    }
    const Index gh = h / p, gw = w / p;
    std::vector<Index> map(static_cast<std::size_t>(x.size()));
    Index o = 0;
    for (Index pi = 0; pi < gh; ++pi) {
        for (Index pj = 0; pj < gw; ++pj) {
            for (Index di = 0; di < p; ++di) {
                for (Index dj = 0; dj < p; ++dj) {
                    for (Index ch = 0; ch < c; ++ch) {
                        map[o++] = ((pi * p + di) * w + (pj * p + dj)) * c + ch;
                    }
                }
            }
        }
    }
    return detail::permutation_op(x, Shape{gh, gw, p * p * c}, std::move(map));
}

/// Concatenates each 2x2 token neighborhood channel-wise, row-major
/// (top-left, top-right, bottom-left, bottom-right): out[h/2, w/2, 4C].
template <typename S>
Tensor<S> merge_2x2(const Tensor<S>& x) {
    if (x.rank() != 3) {
        throw std::invalid_argument("merge_2x2: expected [h,w,C], got " + shape_str(x.shape()));
    }
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("merge_2x2: grid " + std::to_string(h) + "x" +
                                    std::to_string(w) + " must have even sides");
    }
    std::vector<Index> map(static_cast<std::size_t>(x.size()));
    Index o = 0;
    for (Index i = 0; i < h / 2; ++i) {
        for (Index j = 0; j < w / 2; ++j) {
            for (Index q = 0; q < 4; ++q) {
                const Index si = 2 * i + q / 2, sj = 2 * j + q % 2;
                for (Index ch = 0; ch < c; ++ch) {
                    map[o++] = (si * w + sj) * c + ch;
                }
            }
        }
    }
    return detail::permutation_op(x, Shape{h / 2, w / 2, 4 * c}, std::move(map));
}

}  // namespace swinmil

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "swinmil/mask.hpp"
#include "swinmil/ops.hpp"
#include "swinmil/tensor.hpp"

namespace swinmil {

/// Bag-pooling and fusion settings. fusion_weights must have one entry per
/// encoder stage; the default triple matches the fixed 0.3/0.4/0.3 scheme.
struct HeadConfig {
    double r = 4.0;
    std::vector<double> fusion_weights{0.3, 0.4, 0.3};
    double clamp_eps = 1e-7;

    void validate(Index stages) const {
        if (r < 1.0) {
            throw std::invalid_argument("HeadConfig: r must be >= 1, got " + std::to_string(r));
        }
        if (static_cast<Index>(fusion_weights.size()) != stages) {
            throw std::invalid_argument("HeadConfig: " + std::to_string(fusion_weights.size()) +
                                        " fusion weights for " + std::to_string(stages) +
                                        " stages");
        }
        double sum = 0;
        for (double w : fusion_weights) {
            if (w < 0) throw std::invalid_argument("HeadConfig: negative fusion weight");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw std::invalid_argument("HeadConfig: fusion weights sum to " +
                                        std::to_string(sum) + ", expected 1");
        }
        if (clamp_eps <= 0 || clamp_eps >= 0.5) {
            throw std::invalid_argument("HeadConfig: clamp_eps out of range");
        }
    }
};

/// Stage decoder: squeeze channels to 1, bilinear-upsample to the image
/// size, then sigmoid — in exactly that order. Returns an [H, W] map.
template <typename S>
Tensor<S> side_output(const Tensor<S>& feat, const Tensor<S>& w, const Tensor<S>& b, Index out_h,
                      Index out_w) {
    Tensor<S> squeezed = conv1x1(feat, w, b);
    Tensor<S> up = bilinear_upsample(squeezed, out_h, out_w);
    return reshape(sigmoid(up), {out_h, out_w});
}

/// Fixed-weight convex combination of per-stage probability maps.
template <typename S>
Tensor<S> fuse(const std::vector<Tensor<S>>& maps, const std::vector<double>& weights) {
    if (maps.empty() || maps.size() != weights.size()) {
        throw std::invalid_argument("fuse: " + std::to_string(maps.size()) + " maps vs " +
                                    std::to_string(weights.size()) + " weights");
    }
    double sum = 0;
    for (double w : weights) {
        if (w < 0) throw std::invalid_argument("fuse: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("fuse: weights sum to " + std::to_string(sum) +
                                    ", expected 1");
    }
    for (const auto& m : maps) {
        if (m.shape() != maps[0].shape()) {
            throw std::invalid_argument("fuse: map shapes disagree: " + shape_str(m.shape()) +
                                        " vs " + shape_str(maps[0].shape()));
        }
    }
    Tensor<S> out = scale(maps[0], static_cast<S>(weights[0]));
    for (std::size_t i = 1; i < maps.size(); ++i) {
        out = add(out, scale(maps[i], static_cast<S>(weights[i])));
    }
    return out;
}

/// Generalized-mean bag pooling: ((1/|X|) sum y_ij^r)^(1/r) on values
/// clamped to [clamp_eps, 1]. r = 1 is the arithmetic mean; r -> inf
/// approaches the max.
template <typename S>
Tensor<S> gm_pool(const Tensor<S>& map, double r, double clamp_eps = 1e-7) {
    if (r < 1.0) {
        throw std::invalid_argument("gm_pool: r must be >= 1, got " + std::to_string(r));
    }
    Tensor<S> clamped = clamp(map, static_cast<S>(clamp_eps), S(1));
    return pow(mean(pow(clamped, static_cast<S>(r))), static_cast<S>(1.0 / r));
}

/// Per-bag binary cross-entropy on a pooled score, clamped to
/// [eps, 1 - eps] before the log.
template <typename S>
Tensor<S> mil_loss(const Tensor<S>& score, int label, double eps = 1e-7) {
    if (label != 0 && label != 1) {
        throw std::invalid_argument("mil_loss: label must be 0 or 1, got " +
                                    std::to_string(label));
    }
    Tensor<S> p = (label == 1) ? score : add_scalar(scale(score, S(-1)), S(1));
    return scale(log(clamp(p, static_cast<S>(eps), S(1) - static_cast<S>(eps))), S(-1));
}

/// Deep-supervision objective: the sum of every per-stage loss and the
/// fusion loss, unweighted.
template <typename S>
Tensor<S> total_loss(const std::vector<Tensor<S>>& side_scores, const Tensor<S>& fused_score,
                     int label, double eps = 1e-7) {
    Tensor<S> total = mil_loss(side_scores.at(0), label, eps);
    for (std::size_t t = 1; t < side_scores.size(); ++t) {
        total = add(total, mil_loss(side_scores[t], label, eps));
    }
    return add(total, mil_loss(fused_score, label, eps));
}

/// Thresholds a probability map; ties (value == threshold) go to foreground.
template <typename S>
BinaryMask predict_mask(const Tensor<S>& map, double threshold) {
    if (map.rank() != 2) {
        throw std::invalid_argument("predict_mask: expected [H,W], got " +
                                    shape_str(map.shape()));
    }
    BinaryMask mask(map.dim(0), map.dim(1));
    const S* p = map.data();
    for (Index i = 0, n = map.size(); i < n; ++i) {
        mask.fg[static_cast<std::size_t>(i)] = (static_cast<double>(p[i]) >= threshold) ? 1 : 0;
    }
    return mask;
}

}  // namespace swinmil

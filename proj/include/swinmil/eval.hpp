#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "swinmil/data.hpp"
#include "swinmil/metrics.hpp"
#include "swinmil/mil.hpp"
#include "swinmil/model.hpp"

namespace swinmil {

namespace detail {

/// Worker count for per-image parallelism, capped by SWIN_MIL_THREADS.
inline unsigned worker_count() {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("SWIN_MIL_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1 && static_cast<unsigned>(cap) < n) n = static_cast<unsigned>(cap);
    }
    return n;
}

template <typename Fn>
void parallel_for(Index n, Fn&& fn) {
    const unsigned workers = std::min<unsigned>(worker_count(), static_cast<unsigned>(n));
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (Index i = static_cast<Index>(w); i < n; i += static_cast<Index>(workers)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail

/// Which probability map to binarize: 0 selects the fused map, 1..stages a
/// single side-output (the ablation axis).
inline constexpr int kFusedSide = 0;

/// Scores a predictor over an evaluation split. `predict` maps an EvalBag
/// to an [H, W] probability map; results aggregate in index order, so the
/// report is identical at any worker count.
template <typename Predict>
EvalReport evaluate_with(Predict&& predict, const std::vector<EvalBag>& bags, double threshold) {
    std::vector<ImageEval> rows(bags.size());
    detail::parallel_for(static_cast<Index>(bags.size()), [&](Index i) {
        const EvalBag& bag = bags[static_cast<std::size_t>(i)];
        const auto start = std::chrono::steady_clock::now();
        Tensor<float> map = predict(bag);
        const auto stop = std::chrono::steady_clock::now();
        BinaryMask pred = predict_mask(map, threshold);

        ImageEval row;
        row.id = bag.id;
        row.label = bag.label;
        row.seconds = std::chrono::duration<double>(stop - start).count();
        if (bag.label == 1) {
            row.f1 = f1_score(pred, bag.gt);
            const HausdorffResult hd = hausdorff(pred, bag.gt);
            row.hd = hd.value;
            row.hd_defined = hd.defined;
        } else {
            row.f1 = f1_negative(pred);
            row.hd_defined = false;
        }
        rows[static_cast<std::size_t>(i)] = std::move(row);
    });
    return aggregate_report(std::move(rows));
}

/// Runs the model over a split (no tape, parameters read-only) and scores
/// the selected map.
template <typename S>
EvalReport evaluate(const SwinMIL<S>& model, const std::vector<EvalBag>& bags, double threshold,
                    int side = kFusedSide) {
    const Index stages = model.encoder_config().stages();
    if (side < 0 || side > stages) {
        throw std::invalid_argument("evaluate: side " + std::to_string(side) +
                                    " out of range for " + std::to_string(stages) + " stages");
    }
    return evaluate_with(
        [&](const EvalBag& bag) {
            Tensor<S> image(bag.image.shape(), std::vector<S>(bag.image.values().begin(),
                                                              bag.image.values().end()));
            SideOutputs<S> out = model.forward(image);
            const Tensor<S>& map =
                (side == kFusedSide) ? out.fused : out.per_stage[static_cast<std::size_t>(side - 1)];
            return Tensor<float>(map.shape(), std::vector<float>(map.values().begin(),
                                                                 map.values().end()));
        },
        bags, threshold);
}

}  // namespace swinmil

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "swinmil/checkpoint.hpp"
#include "swinmil/config.hpp"
#include "swinmil/data.hpp"
#include "swinmil/mil.hpp"
#include "swinmil/model.hpp"
#include "swinmil/optim.hpp"
#include "swinmil/rng.hpp"

namespace swinmil {

struct StepLog {
    int epoch = 0;
    std::uint64_t step = 0;
    std::vector<double> l_mil;  // per-stage losses, batch-summed
    double l_fuse = 0.0;
    double l_total = 0.0;
};

/// Deterministic single-writer training loop: seeded shuffling each epoch,
/// Eq-style batch-summed losses, Adam with a reduced side-output rate, and
/// bit-exact checkpoint round trips.
class Trainer {
public:
    Trainer(SwinMIL<float>& model, std::vector<TrainBag> bags, const RunConfig& cfg)
        : model_(model),
          bags_(std::move(bags)),
          cfg_(cfg),
          opt_(cfg.train.lr, cfg.train.weight_decay),
          shuffle_rng_(SplitMix64::mix(cfg.train.seed, 0x351ULL)) {
        cfg_.validate();
        if (bags_.empty()) throw std::invalid_argument("Trainer: dataset is empty");
        model_.visit_params([&](const std::string& name, Tensor<float>& t, ParamGroup g) {
            opt_.add_param(name, t, g == ParamGroup::side_output ? cfg_.train.side_lr_ratio : 1.0);
        });
    }

    Index steps_per_epoch() const {
        const Index n = static_cast<Index>(bags_.size());
        const Index b = cfg_.train.batch_size;
        return (n + b - 1) / b;
    }

    int epoch() const { return epoch_; }
    std::uint64_t global_step() const { return opt_.step_count(); }

    /// One optimizer step over a batch of bag indices. Losses follow the
    /// objective exactly: per-stage and fusion cross-entropies on pooled
    /// scores, summed over the batch and over stages.
    StepLog train_batch(const std::vector<Index>& batch) {
        const Index stages = model_.encoder_config().stages();
        const HeadConfig& head = model_.config().head;
        opt_.zero_grad();
        Tape<float> tape;

        std::vector<Tensor<float>> stage_losses;
        Tensor<float> fuse_loss;
        for (Index idx : batch) {
            const TrainBag& bag = bags_[static_cast<std::size_t>(idx)];
            SideOutputs<float> out = model_.forward(bag.image);
            for (Index t = 0; t < stages; ++t) {
                Tensor<float> score = gm_pool(out.per_stage[static_cast<std::size_t>(t)], head.r,
                                              head.clamp_eps);
                Tensor<float> l = mil_loss(score, bag.label, head.clamp_eps);
                if (static_cast<Index>(stage_losses.size()) <= t) {
                    stage_losses.push_back(l);
                } else {
                    stage_losses[static_cast<std::size_t>(t)] =
                        add(stage_losses[static_cast<std::size_t>(t)], l);
                }
            }
            Tensor<float> fused_score = gm_pool(out.fused, head.r, head.clamp_eps);
            Tensor<float> lf = mil_loss(fused_score, bag.label, head.clamp_eps);
            fuse_loss = fuse_loss.defined() ? add(fuse_loss, lf) : lf;
        }
        Tensor<float> total = fuse_loss;
        for (const auto& l : stage_losses) total = add(total, l);

        const double total_val = static_cast<double>(total.item());
        if (std::isnan(total_val)) {
            throw std::runtime_error("train: NaN loss at step " +
                                     std::to_string(opt_.step_count() + 1));
        }
        tape.backward(total);
        clip_gradients();
        opt_.step();

        StepLog log;
        log.epoch = epoch_;
        log.step = opt_.step_count();
        for (const auto& l : stage_losses) log.l_mil.push_back(static_cast<double>(l.item()));
        log.l_fuse = static_cast<double>(fuse_loss.item());
        log.l_total = total_val;
        return log;
    }

    std::vector<StepLog> run_epoch() {
        ++epoch_;
        std::vector<Index> order(bags_.size());
        std::iota(order.begin(), order.end(), Index(0));
        shuffle(order, shuffle_rng_);

        std::vector<StepLog> logs;
        const Index b = cfg_.train.batch_size;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(b)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(b));
            logs.push_back(train_batch({order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(stop)}));
        }
        return logs;
    }

    /// Snapshot of parameters, optimizer moments, config, step counter, and
    /// shuffle-RNG state.
    Checkpoint make_checkpoint() {
        Checkpoint ckpt;
        ckpt.config_text = cfg_.to_key_values();
        // deep copies: the snapshot must not alias live parameters
        auto snap = [](const Tensor<float>& t) {
            return Tensor<float>(t.shape(), std::vector<float>(t.values()));
        };
        for (const auto& slot : opt_.slots()) {
            ckpt.tensors.emplace_back(slot.name, snap(slot.param));
        }
        for (const auto& slot : opt_.slots()) {
            ckpt.tensors.emplace_back(slot.name + ".m", snap(slot.m));
            ckpt.tensors.emplace_back(slot.name + ".v", snap(slot.v));
        }
        ckpt.step = opt_.step_count();
        ckpt.rng_state = shuffle_rng_.state();
        return ckpt;
    }

    /// Restores a checkpoint taken at an epoch boundary; continuing
    /// reproduces the uninterrupted run bit for bit.
    void restore(const Checkpoint& ckpt) {
        for (auto& slot : opt_.slots()) {
            copy_into(ckpt, slot.name, slot.param);
            copy_into(ckpt, slot.name + ".m", slot.m);
            copy_into(ckpt, slot.name + ".v", slot.v);
        }
        opt_.set_step_count(ckpt.step);
        shuffle_rng_.set_state(ckpt.rng_state);
        epoch_ = static_cast<int>(ckpt.step / static_cast<std::uint64_t>(steps_per_epoch()));
    }

private:
    // Saturated pooled scores can spike the cross-entropy gradient by orders
    // of magnitude; a global-norm clip keeps random-init desk runs on track.
    void clip_gradients() {
        const double max_norm = cfg_.train.grad_clip_norm;
        if (max_norm <= 0) return;
        double norm2 = 0;
        for (const auto& slot : opt_.slots()) {
            for (float g : slot.param.grad()) norm2 += static_cast<double>(g) * g;
        }
        const double norm = std::sqrt(norm2);
        if (norm <= max_norm) return;
        const float scale = static_cast<float>(max_norm / norm);
        for (auto& slot : opt_.slots()) {
            for (float& g : slot.param.grad()) g *= scale;
        }
    }

    static void copy_into(const Checkpoint& ckpt, const std::string& name, Tensor<float>& dst) {
        const Tensor<float>* src = ckpt.find(name);
        if (!src) throw std::runtime_error("Trainer::restore: checkpoint lacks tensor " + name);
        if (src->shape() != dst.shape()) {
            throw std::runtime_error("Trainer::restore: tensor " + name + " has shape " +
                                     shape_str(src->shape()) + ", expected " +
                                     shape_str(dst.shape()));
        }
        dst.values() = src->values();
    }

    SwinMIL<float>& model_;
    std::vector<TrainBag> bags_;
    RunConfig cfg_;
    Adam<float> opt_;
    SplitMix64 shuffle_rng_;
    int epoch_ = 0;
};

}  // namespace swinmil

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "swinmil/tensor.hpp"

namespace swinmil {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update with bias correction. Weight decay is L2-coupled: it is
/// added to the gradient before the moment updates. `step` is the 1-based
/// step count after incrementing.
template <typename S>
void adam_step(Tensor<S>& param, const std::vector<S>& grad, Tensor<S>& m, Tensor<S>& v,
               std::uint64_t step, double lr, double weight_decay, const AdamConfig& cfg,
               const std::string& name = "") {
    if (static_cast<Index>(grad.size()) != param.size()) {
        throw std::invalid_argument("adam_step: gradient size " + std::to_string(grad.size()) +
                                    " vs parameter " + shape_str(param.shape()));
    }
    S* p = param.data();
    S* pm = m.data();
    S* pv = v.data();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (Index i = 0, n = param.size(); i < n; ++i) {
        const double gi = static_cast<double>(grad[static_cast<std::size_t>(i)]);
        if (std::isnan(gi)) {
            throw std::runtime_error("adam_step: NaN gradient in parameter '" +
                                     (name.empty() ? "<unnamed>" : name) + "' at flat index " +
                                     std::to_string(i));
        }
        const double g = gi + weight_decay * static_cast<double>(p[i]);
        const double mi = cfg.beta1 * static_cast<double>(pm[i]) + (1.0 - cfg.beta1) * g;
        const double vi = cfg.beta2 * static_cast<double>(pv[i]) + (1.0 - cfg.beta2) * g * g;
        pm[i] = static_cast<S>(mi);
        pv[i] = static_cast<S>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        p[i] = static_cast<S>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

/// Adam over named parameter slots with per-slot learning-rate scales
/// (side-output layers run at 1/100 of the global rate).
template <typename S>
class Adam {
public:
    struct Slot {
        std::string name;
        Tensor<S> param;
        Tensor<S> m, v;
        double lr_scale;
    };

    Adam(double lr, double weight_decay, AdamConfig cfg = {})
        : lr_(lr), weight_decay_(weight_decay), cfg_(cfg) {}

    void add_param(const std::string& name, const Tensor<S>& param, double lr_scale = 1.0) {
        Slot s;
        s.name = name;
        s.param = param;
        s.m = Tensor<S>(param.shape());
        s.v = Tensor<S>(param.shape());
        s.lr_scale = lr_scale;
        slots_.push_back(std::move(s));
    }

    void step() {
        ++step_count_;
        for (auto& s : slots_) {
            adam_step(s.param, s.param.grad(), s.m, s.v, step_count_, lr_ * s.lr_scale,
                      weight_decay_, cfg_, s.name);
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.param.zero_grad();
    }

    double lr() const { return lr_; }
    double weight_decay() const { return weight_decay_; }
    std::uint64_t step_count() const { return step_count_; }
    void set_step_count(std::uint64_t n) { step_count_ = n; }

    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    double lr_;
    double weight_decay_;
    AdamConfig cfg_;
    std::uint64_t step_count_ = 0;
    std::vector<Slot> slots_;
};

}  // namespace swinmil

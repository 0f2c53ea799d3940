#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace swinmil {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

inline std::vector<Index> row_major_strides(const Shape& shape) {
    std::vector<Index> strides(shape.size(), 1);
    for (Index i = static_cast<Index>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

template <typename S>
struct TensorStorage {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // sized like value iff requires_grad
    bool requires_grad = false;
};

/// Dense row-major tensor. Copying the handle shares storage; every op in
/// ops.hpp allocates a fresh output. Values are immutable once an op has
/// produced them; gradient buffers are the one mutable exception.
///
/// S is float for training/inference and double for gradient checks.
template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    explicit Tensor(Shape shape, S fill = S(0), bool requires_grad = false)
        : d_(std::make_shared<TensorStorage<S>>()) {
        d_->shape = std::move(shape);
        d_->value.assign(static_cast<std::size_t>(numel(d_->shape)), fill);
        set_requires_grad(requires_grad);
    }

    Tensor(Shape shape, std::vector<S> values, bool requires_grad = false)
        : d_(std::make_shared<TensorStorage<S>>()) {
        if (numel(shape) != static_cast<Index>(values.size())) {
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " wants " +
                                        std::to_string(numel(shape)) + " values, got " +
                                        std::to_string(values.size()));
        }
        d_->shape = std::move(shape);
        d_->value = std::move(values);
        set_requires_grad(requires_grad);
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<S>{v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d().shape; }
    Index rank() const { return static_cast<Index>(d().shape.size()); }
    Index dim(Index i) const { return d().shape[static_cast<std::size_t>(i)]; }
    Index size() const { return static_cast<Index>(d().value.size()); }

    const std::vector<S>& values() const { return d().value; }
    std::vector<S>& values() { return d().value; }
    const S* data() const { return d().value.data(); }
    S* data() { return d().value.data(); }

    S item() const {
        if (size() != 1) {
            throw std::logic_error("Tensor::item: tensor of shape " + shape_str(shape()) +
                                   " is not a scalar");
        }
        return d().value[0];
    }

    S operator()(Index i) const { return d().value[static_cast<std::size_t>(i)]; }
    S operator()(Index i, Index j) const {
        return d().value[static_cast<std::size_t>(i * dim(1) + j)];
    }
    S operator()(Index i, Index j, Index k) const {
        return d().value[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
    }

    bool requires_grad() const { return defined() && d_->requires_grad; }

    void set_requires_grad(bool enable) {
        if (enable) {
            d().requires_grad = true;
            if (d_->grad.size() != d_->value.size()) {
                d_->grad.assign(d_->value.size(), S(0));
            }
        } else {
            d().requires_grad = false;
            d_->grad.clear();
        }
    }

    /// Gradient buffer, same shape as the values. Mutable through const
    /// handles so tape closures can accumulate into captured tensors.
    std::vector<S>& grad() const {
        if (!requires_grad()) {
            throw std::logic_error("Tensor::grad: tensor does not require grad");
        }
        return d_->grad;
    }

    void zero_grad() {
        if (requires_grad()) std::fill(d_->grad.begin(), d_->grad.end(), S(0));
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

private:
    TensorStorage<S>& d() const {
        if (!d_) throw std::logic_error("Tensor: use of undefined tensor");
        return *d_;
    }

    std::shared_ptr<TensorStorage<S>> d_;
};

/// Ordered record of executed ops. Constructing a tape makes it the active
/// tape for the current thread (restoring the previous one on destruction),
/// so independent tapes may run concurrently on different threads.
///
/// backward() replays adjoints in exact reverse execution order, which is a
/// reverse topological order of the recorded graph. Replaying twice without
/// recording a new forward is an error.
template <typename S>
class Tape {
public:
    Tape() : prev_(active_) { active_ = this; }
    ~Tape() { active_ = prev_; }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> adjoint) {
        nodes_.push_back(std::move(adjoint));
        spent_ = false;
    }

    std::size_t node_count() const { return nodes_.size(); }

    void backward(const Tensor<S>& loss) {
        if (!loss.defined() || loss.size() != 1) {
            throw std::invalid_argument(
                "backward: loss must be a scalar, got shape " +
                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
        }
        if (spent_) {
            throw std::logic_error("backward: tape already replayed; run a new forward first");
        }
        if (!loss.requires_grad()) {
            throw std::invalid_argument(
                "backward: loss was not produced on an active tape (requires_grad is false)");
        }
        loss.grad()[0] += S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        spent_ = true;
    }

    void reset() {
        nodes_.clear();
        spent_ = false;
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool spent_ = false;
    Tape* prev_ = nullptr;
    static thread_local Tape* active_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

/// Runs the adjoint sweep for `loss` on the thread's active tape.
template <typename S>
void backward(const Tensor<S>& loss) {
    Tape<S>* tape = Tape<S>::active();
    if (!tape) throw std::logic_error("backward: no active tape on this thread");
    tape->backward(loss);
}

}  // namespace swinmil

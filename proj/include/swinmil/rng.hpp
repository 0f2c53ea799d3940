#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "swinmil/tensor.hpp"

namespace swinmil {

/// SplitMix64: 64-bit state, platform-independent output, trivially
/// serializable (checkpoints store the single state word).
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) { return n <= 1 ? 0 : next() % n; }

    /// Standard normal via Box-Muller (no libstdc++ distribution state).
    double normal() {
        double u1 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Normal(0, std) rejected outside +-2 std.
    double trunc_normal(double stddev) {
        double z;
        do {
            z = normal();
        } while (z < -2.0 || z > 2.0);
        return z * stddev;
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    /// Deterministic stream derivation (seed, index) -> sub-seed.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        SplitMix64 s(a ^ (0x9E3779B97F4A7C15ULL * (b + 1)));
        return s.next();
    }

private:
    std::uint64_t state_;
};

template <typename S>
void shuffle(std::vector<S>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
    }
}

/// Xavier/Glorot uniform on [-a, a], a = sqrt(6 / (fan_in + fan_out)),
/// for 2-D weight shapes [fan_in, fan_out].
template <typename S>
Tensor<S> xavier_uniform(const Shape& shape, SplitMix64& rng) {
    if (shape.size() != 2) {
        throw std::invalid_argument("xavier_uniform: need a 2-D shape, got " + shape_str(shape));
    }
    const Index fan_in = shape[0], fan_out = shape[1];
    if (fan_in <= 0 || fan_out <= 0) {
        throw std::invalid_argument("xavier_uniform: degenerate fan values in " +
                                    shape_str(shape));
    }
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<S> t(shape);
    for (Index i = 0, n = t.size(); i < n; ++i) t.data()[i] = static_cast<S>(rng.uniform(-a, a));
    return t;
}

template <typename S>
Tensor<S> trunc_normal_init(const Shape& shape, double stddev, SplitMix64& rng) {
    Tensor<S> t(shape);
    for (Index i = 0, n = t.size(); i < n; ++i) {
        t.data()[i] = static_cast<S>(rng.trunc_normal(stddev));
    }
    return t;
}

}  // namespace swinmil

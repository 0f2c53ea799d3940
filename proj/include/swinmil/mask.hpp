#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "swinmil/tensor.hpp"

namespace swinmil {

/// H x W boolean foreground mask, row-major.
struct BinaryMask {
    Index h = 0, w = 0;
    std::vector<std::uint8_t> fg;

    BinaryMask() = default;
    BinaryMask(Index height, Index width)
        : h(height), w(width), fg(static_cast<std::size_t>(height * width), 0) {}

    bool at(Index i, Index j) const { return fg[static_cast<std::size_t>(i * w + j)] != 0; }
    void set(Index i, Index j, bool v) { fg[static_cast<std::size_t>(i * w + j)] = v ? 1 : 0; }

    Index count() const {
        Index n = 0;
        for (auto v : fg) n += (v != 0);
        return n;
    }
    bool empty_fg() const { return count() == 0; }

    bool operator==(const BinaryMask& o) const { return h == o.h && w == o.w && fg == o.fg; }
};

inline void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* op) {
    if (a.h != b.h || a.w != b.w) {
        throw std::invalid_argument(std::string(op) + ": mask shapes " + std::to_string(a.h) +
                                    "x" + std::to_string(a.w) + " vs " + std::to_string(b.h) +
                                    "x" + std::to_string(b.w) + " disagree");
    }
}

}  // namespace swinmil

#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace pgd {

/// Row-major H x W scalar field. Used for corner-response maps,
/// per-head probability maps and similar intermediates.
struct Field {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    Field() = default;
    Field(int h, int w, double fill = 0.0)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
    double& at(int i, int j) { return values[static_cast<std::size_t>(i) * width + j]; }

    /// Replicate-border lookup.
    double at_clamped(int i, int j) const {
        i = std::clamp(i, 0, height - 1);
        j = std::clamp(j, 0, width - 1);
        return at(i, j);
    }
};

} // namespace pgd

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pgd/mixture.hpp"

namespace pgd {

/// K-channel structure-distribution heatmap, values in [0, 1],
/// channel-major then row-major. Channel k renders the k-th component of
/// the weight-sorted mixture.
struct HeatmapStack {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    double at(int k, int i, int j) const {
        return values[(static_cast<std::size_t>(k) * height + i) * width + j];
    }
    double& at(int k, int i, int j) {
        return values[(static_cast<std::size_t>(k) * height + i) * width + j];
    }
};

/// Truncated Gaussian surface of one component on an H x W pixel grid.
///
/// Pixel (row i, col j) has value exp(-q/2) with the Mahalanobis quadratic
/// q = inv_xx*dx*dx + 2*inv_xy*dx*dy + inv_yy*dy*dy, dx = j - mean.x,
/// dy = i - mean.y, and inverse entries inv_xx = cov.yy/det,
/// inv_xy = -cov.xy/det, inv_yy = cov.xx/det. Values with q > 9 (outside
/// three sigma; the boundary q == 9 is kept) are set to 0. This exact
/// evaluation order is normative: independent re-evaluations must agree
/// bit-for-bit in double precision.
inline std::vector<double> component_heatmap(const GaussianComponent& component, int height,
                                             int width) {
    const SymMat2& cov = component.covariance;
    const double det = cov.det();
    if (det <= 0.0 || cov.xx <= 0.0)
        throw std::invalid_argument("component_heatmap: covariance not positive definite");
    const double inv_xx = cov.yy / det;
    const double inv_xy = -cov.xy / det;
    const double inv_yy = cov.xx / det;

    std::vector<double> out(static_cast<std::size_t>(height) * width, 0.0);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            const double dx = j - component.mean.x;
            const double dy = i - component.mean.y;
            const double q = inv_xx * dx * dx + 2.0 * inv_xy * dx * dy + inv_yy * dy * dy;
            if (q <= 9.0)
                out[static_cast<std::size_t>(i) * width + j] = std::exp(-0.5 * q);
        }
    }
    return out;
}

/// Render all channels of a weight-sorted mixture.
inline HeatmapStack heatmap_stack(const GaussianMixture& mixture, int height, int width) {
    if (mixture.components.empty())
        throw std::invalid_argument("heatmap_stack: empty mixture");
    if (!std::is_sorted(mixture.components.begin(), mixture.components.end(),
                        [](const GaussianComponent& a, const GaussianComponent& b) {
                            return a.weight > b.weight;
                        }))
        throw std::invalid_argument("heatmap_stack: mixture must be sorted by weight");

    HeatmapStack stack;
    stack.channels = static_cast<int>(mixture.components.size());
    stack.height = height;
    stack.width = width;
    stack.values.resize(static_cast<std::size_t>(stack.channels) * height * width);
    for (int k = 0; k < stack.channels; ++k) {
        const auto channel = component_heatmap(mixture.components[k], height, width);
        std::copy(channel.begin(), channel.end(),
                  stack.values.begin() + static_cast<std::size_t>(k) * height * width);
    }
    return stack;
}

/// Mean square error between stacks, averaged over channels:
/// (1/K) * sum_k mean_pixels (target_k - prediction_k)^2.
inline double pgssl_loss(const HeatmapStack& target, const HeatmapStack& prediction) {
    if (target.channels != prediction.channels || target.height != prediction.height ||
        target.width != prediction.width)
        throw std::invalid_argument("pgssl_loss: shape mismatch");
    const std::size_t per_channel = static_cast<std::size_t>(target.height) * target.width;
    double total = 0.0;
    for (int k = 0; k < target.channels; ++k) {
        double mse = 0.0;
        const std::size_t base = static_cast<std::size_t>(k) * per_channel;
        for (std::size_t idx = 0; idx < per_channel; ++idx) {
            const double d = target.values[base + idx] - prediction.values[base + idx];
            mse += d * d;
        }
        total += mse / static_cast<double>(per_channel);
    }
    return total / static_cast<double>(target.channels);
}

} // namespace pgd

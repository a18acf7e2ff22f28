#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pgd/field.hpp"
#include "pgd/image.hpp"
#include "pgd/points.hpp"

namespace pgd {

/// Harris-Laplace extraction parameters.
struct HarrisConfig {
    double k = 0.04;
    std::vector<double> scales = {1.0, 1.6, 2.56, 4.1};
    double nms_radius = 3.0;
    double response_floor = 0.01;
    int max_points = 64;
};

inline void validate_harris_config(const HarrisConfig& cfg) {
    if (cfg.k < 0.02 || cfg.k > 0.15)
        throw std::invalid_argument("HarrisConfig: k must be in [0.02, 0.15]");
    if (cfg.scales.empty() || !std::is_sorted(cfg.scales.begin(), cfg.scales.end()))
        throw std::invalid_argument("HarrisConfig: scales must be nonempty and ascending");
    for (double s : cfg.scales)
        if (s <= 0.0)
            throw std::invalid_argument("HarrisConfig: scales must be positive");
    if (!(cfg.response_floor > 0.0 && cfg.response_floor < 1.0))
        throw std::invalid_argument("HarrisConfig: response_floor must be in (0, 1)");
    if (cfg.max_points < 1)
        throw std::invalid_argument("HarrisConfig: max_points must be >= 1");
    if (cfg.nms_radius < 0.0)
        throw std::invalid_argument("HarrisConfig: nms_radius must be nonnegative");
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        k[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
        sum += k[t + radius];
    }
    for (double& v : k)
        v /= sum;
    return k;
}

/// Separable Gaussian smoothing with replicate border.
inline Field gaussian_smooth(const Field& in, double sigma) {
    const auto kernel = gaussian_kernel(sigma);
    const int radius = static_cast<int>(kernel.size() / 2);

    Field tmp(in.height, in.width);
    for (int i = 0; i < in.height; ++i)
        for (int j = 0; j < in.width; ++j) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += kernel[t + radius] * in.at_clamped(i, j + t);
            tmp.at(i, j) = acc;
        }
    Field out(in.height, in.width);
    for (int i = 0; i < in.height; ++i)
        for (int j = 0; j < in.width; ++j) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += kernel[t + radius] * tmp.at_clamped(i + t, j);
            out.at(i, j) = acc;
        }
    return out;
}

inline Field field_from_chip(const ImageChip& chip) {
    Field f(chip.height, chip.width);
    f.values = chip.values;
    return f;
}

/// Central-difference gradients with replicate border.
inline void gradients(const Field& in, Field& gx, Field& gy) {
    gx = Field(in.height, in.width);
    gy = Field(in.height, in.width);
    for (int i = 0; i < in.height; ++i)
        for (int j = 0; j < in.width; ++j) {
            gx.at(i, j) = 0.5 * (in.at_clamped(i, j + 1) - in.at_clamped(i, j - 1));
            gy.at(i, j) = 0.5 * (in.at_clamped(i + 1, j) - in.at_clamped(i - 1, j));
        }
}

/// 5-point Laplacian with replicate border.
inline Field laplacian(const Field& in) {
    Field out(in.height, in.width);
    for (int i = 0; i < in.height; ++i)
        for (int j = 0; j < in.width; ++j)
            out.at(i, j) = in.at_clamped(i - 1, j) + in.at_clamped(i + 1, j) +
                           in.at_clamped(i, j - 1) + in.at_clamped(i, j + 1) - 4.0 * in.at(i, j);
    return out;
}

} // namespace detail

/// Harris response at one scale: R = det(M) - k * trace(M)^2 with the
/// second-moment matrix M built from central-difference gradients of the
/// chip and smoothed by a Gaussian window of the given sigma. Replicate
/// border everywhere.
inline Field harris_response(const ImageChip& chip, double sigma, double k) {
    if (sigma <= 0.0)
        throw std::invalid_argument("harris_response: sigma must be positive");
    Field img = detail::field_from_chip(chip);
    Field gx, gy;
    detail::gradients(img, gx, gy);

    Field gxx(chip.height, chip.width), gxy(chip.height, chip.width),
        gyy(chip.height, chip.width);
    for (std::size_t idx = 0; idx < img.values.size(); ++idx) {
        gxx.values[idx] = gx.values[idx] * gx.values[idx];
        gxy.values[idx] = gx.values[idx] * gy.values[idx];
        gyy.values[idx] = gy.values[idx] * gy.values[idx];
    }
    gxx = detail::gaussian_smooth(gxx, sigma);
    gxy = detail::gaussian_smooth(gxy, sigma);
    gyy = detail::gaussian_smooth(gyy, sigma);

    Field resp(chip.height, chip.width);
    for (std::size_t idx = 0; idx < resp.values.size(); ++idx) {
        const double a = gxx.values[idx], b = gxy.values[idx], c = gyy.values[idx];
        const double tr = a + c;
        resp.values[idx] = (a * c - b * b) - k * tr * tr;
    }
    return resp;
}

/// Scale-normalized Laplacian magnitude |sigma^2 * Lap(G_sigma * I)|.
inline Field scale_laplacian(const ImageChip& chip, double sigma) {
    Field smooth = detail::gaussian_smooth(detail::field_from_chip(chip), sigma);
    Field lap = detail::laplacian(smooth);
    for (double& v : lap.values)
        v = std::abs(v) * sigma * sigma;
    return lap;
}

/// Greedy non-maximum suppression over candidates sorted by point_order:
/// a candidate survives when no stronger survivor lies within `radius`
/// (Euclidean, boundary suppresses). At most max_points survive.
inline ScatterPointSet greedy_nms(const std::vector<ScatterPoint>& sorted_candidates,
                                  double radius, int max_points) {
    ScatterPointSet out;
    const double r2 = radius * radius;
    for (const auto& c : sorted_candidates) {
        bool suppressed = false;
        for (const auto& kept : out.points) {
            const double dx = kept.x - c.x, dy = kept.y - c.y;
            if (dx * dx + dy * dy <= r2) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            out.points.push_back(c);
            if (static_cast<int>(out.points.size()) >= max_points)
                break;
        }
    }
    return out;
}

/// Harris-Laplace point extraction.
///
/// Per pixel the scale with the largest normalized Laplacian is selected
/// (ties go to the smaller scale). Candidates are pixels whose Harris
/// response at their selected scale is positive and not exceeded by any of
/// the 8 neighbors in that same response map. Candidates weaker than
/// response_floor times the strongest candidate are dropped, then greedy
/// NMS by descending response keeps points pairwise further apart than
/// nms_radius (Euclidean), capped at max_points.
inline ScatterPointSet extract_points(const ImageChip& chip, const HarrisConfig& cfg) {
    validate_harris_config(cfg);

    const std::size_t n_scales = cfg.scales.size();
    std::vector<Field> resp(n_scales), lap(n_scales);
    for (std::size_t s = 0; s < n_scales; ++s) {
        resp[s] = harris_response(chip, cfg.scales[s], cfg.k);
        lap[s] = scale_laplacian(chip, cfg.scales[s]);
    }

    std::vector<ScatterPoint> candidates;
    for (int i = 0; i < chip.height; ++i) {
        for (int j = 0; j < chip.width; ++j) {
            std::size_t best = 0;
            for (std::size_t s = 1; s < n_scales; ++s)
                if (lap[s].at(i, j) > lap[best].at(i, j))
                    best = s;
            const Field& r = resp[best];
            const double v = r.at(i, j);
            if (v <= 0.0)
                continue;
            bool is_max = true;
            for (int di = -1; di <= 1 && is_max; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    if (di == 0 && dj == 0)
                        continue;
                    if (r.at_clamped(i + di, j + dj) > v) {
                        is_max = false;
                        break;
                    }
                }
            if (is_max)
                candidates.push_back({static_cast<double>(j), static_cast<double>(i), v,
                                      cfg.scales[best]});
        }
    }

    ScatterPointSet out;
    if (candidates.empty())
        return out;

    std::sort(candidates.begin(), candidates.end(), point_order);
    const double floor = cfg.response_floor * candidates.front().response;
    while (!candidates.empty() && candidates.back().response < floor)
        candidates.pop_back();
    return greedy_nms(candidates, cfg.nms_radius, cfg.max_points);
}

} // namespace pgd

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pgd/image.hpp"
#include "pgd/points.hpp"
#include "pgd/rng.hpp"

namespace pgd {

/// Line segment rendered with a fixed half-width of 1 pixel.
struct SegmentSpec {
    double x0 = 0.0, y0 = 0.0;
    double x1 = 0.0, y1 = 0.0;
    double intensity = 1.0;
};

struct DiskSpec {
    double cx = 0.0, cy = 0.0;
    double radius = 1.0;
    double intensity = 1.0;
};

/// Deterministic synthetic SAR-airplane chip: a fuselage segment, wing
/// segments, bright engine disks and optional clamped Gaussian clutter.
struct SynthSpec {
    int height = 256;
    int width = 192;
    SegmentSpec fuselage;
    std::vector<SegmentSpec> wings;
    std::vector<DiskSpec> engines;
    double clutter_sigma = 0.0;
    std::uint64_t seed = 0;
};

struct SynthResult {
    ImageChip chip;
    ScatterPointSet ground_truth;
};

namespace detail {

inline void require_inside(double x, double y, const SynthSpec& spec, const char* what) {
    if (x < 0.0 || x > spec.width - 1 || y < 0.0 || y > spec.height - 1)
        throw std::invalid_argument(std::string("SynthSpec: ") + what + " out of chip bounds");
}

inline void require_intensity(double v, const char* what) {
    if (!(v > 0.0 && v <= 1.0))
        throw std::invalid_argument(std::string("SynthSpec: ") + what + " intensity must be in (0, 1]");
}

inline double dist_to_segment(double px, double py, const SegmentSpec& s) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = s.x0 + t * dx, qy = s.y0 + t * dy;
    return std::hypot(px - qx, py - qy);
}

inline void render_segment(ImageChip& chip, const SegmentSpec& s) {
    constexpr double half_width = 1.0;
    const int j0 = static_cast<int>(std::floor(std::min(s.x0, s.x1) - half_width));
    const int j1 = static_cast<int>(std::ceil(std::max(s.x0, s.x1) + half_width));
    const int i0 = static_cast<int>(std::floor(std::min(s.y0, s.y1) - half_width));
    const int i1 = static_cast<int>(std::ceil(std::max(s.y0, s.y1) + half_width));
    for (int i = std::max(i0, 0); i <= std::min(i1, chip.height - 1); ++i)
        for (int j = std::max(j0, 0); j <= std::min(j1, chip.width - 1); ++j)
            if (dist_to_segment(j, i, s) <= half_width)
                chip.at(i, j) = std::max(chip.at(i, j), s.intensity);
}

inline void render_disk(ImageChip& chip, const DiskSpec& d) {
    const int j0 = static_cast<int>(std::floor(d.cx - d.radius));
    const int j1 = static_cast<int>(std::ceil(d.cx + d.radius));
    const int i0 = static_cast<int>(std::floor(d.cy - d.radius));
    const int i1 = static_cast<int>(std::ceil(d.cy + d.radius));
    for (int i = std::max(i0, 0); i <= std::min(i1, chip.height - 1); ++i)
        for (int j = std::max(j0, 0); j <= std::min(j1, chip.width - 1); ++j)
            if (std::hypot(j - d.cx, i - d.cy) <= d.radius)
                chip.at(i, j) = std::max(chip.at(i, j), d.intensity);
}

} // namespace detail

inline void validate_synth_spec(const SynthSpec& spec) {
    if (spec.height < kMinChipDim || spec.width < kMinChipDim)
        throw std::invalid_argument("SynthSpec: chip dimensions must be at least 8x8");
    if (spec.clutter_sigma < 0.0)
        throw std::invalid_argument("SynthSpec: clutter_sigma must be nonnegative");
    auto check_segment = [&](const SegmentSpec& s, const char* what) {
        detail::require_inside(s.x0, s.y0, spec, what);
        detail::require_inside(s.x1, s.y1, spec, what);
        detail::require_intensity(s.intensity, what);
    };
    check_segment(spec.fuselage, "fuselage");
    for (const auto& w : spec.wings)
        check_segment(w, "wing");
    for (const auto& e : spec.engines) {
        detail::require_inside(e.cx - e.radius, e.cy - e.radius, spec, "engine");
        detail::require_inside(e.cx + e.radius, e.cy + e.radius, spec, "engine");
        detail::require_intensity(e.intensity, "engine");
        if (e.radius <= 0.0)
            throw std::invalid_argument("SynthSpec: engine radius must be positive");
    }
}

/// Render a chip from `spec`. Shapes composite by max; clutter is additive
/// Gaussian noise clamped to [0, 1], seeded by spec.seed. The ground truth
/// lists segment endpoints and disk centers with the composited intensity
/// at the nearest pixel as response (recorded before clutter).
inline SynthResult synth_chip(const SynthSpec& spec) {
    validate_synth_spec(spec);

    ImageChip chip;
    chip.height = spec.height;
    chip.width = spec.width;
    chip.values.assign(static_cast<std::size_t>(spec.height) * spec.width, 0.0);

    detail::render_segment(chip, spec.fuselage);
    for (const auto& w : spec.wings)
        detail::render_segment(chip, w);
    for (const auto& e : spec.engines)
        detail::render_disk(chip, e);

    ScatterPointSet gt;
    auto add_gt = [&](double x, double y) {
        const int j = static_cast<int>(std::lround(x));
        const int i = static_cast<int>(std::lround(y));
        gt.points.push_back({x, y, chip.at(i, j), 0.0});
    };
    add_gt(spec.fuselage.x0, spec.fuselage.y0);
    add_gt(spec.fuselage.x1, spec.fuselage.y1);
    for (const auto& w : spec.wings) {
        add_gt(w.x0, w.y0);
        add_gt(w.x1, w.y1);
    }
    for (const auto& e : spec.engines)
        add_gt(e.cx, e.cy);
    sort_points(gt);

    if (spec.clutter_sigma > 0.0) {
        SplitMix64 rng(spec.seed);
        for (double& v : chip.values)
            v = std::clamp(v + spec.clutter_sigma * rng.next_normal(), 0.0, 1.0);
    }

    validate_chip(chip);
    return {std::move(chip), std::move(gt)};
}

/// Seeded airplane-like layout: a tilted fuselage, two wing segments with
/// engine disks along them, and a tail bar. Geometry stays inside a margin
/// so the spec always validates.
inline SynthSpec random_airplane_spec(std::uint64_t seed, int height = 256, int width = 192,
                                      double clutter_sigma = 0.0) {
    SynthSpec spec;
    spec.height = height;
    spec.width = width;
    spec.seed = seed;
    spec.clutter_sigma = clutter_sigma;

    SplitMix64 rng(seed ^ 0xA1B2C3D4E5F60718ULL); // layout stream, separate from clutter
    const double margin = 12.0;
    const double cx = width / 2.0 + (rng.next_double() - 0.5) * width * 0.15;
    const double cy = height / 2.0 + (rng.next_double() - 0.5) * height * 0.15;
    const double extent = 0.5 * std::min(height, width) - margin;
    const double angle = rng.next_double() * 2.0 * 3.141592653589793;
    const double fx = std::cos(angle), fy = std::sin(angle);

    auto clamp_point = [&](double& x, double& y) {
        x = std::clamp(x, margin, width - 1 - margin);
        y = std::clamp(y, margin, height - 1 - margin);
    };

    const double half_len = extent * (0.7 + 0.25 * rng.next_double());
    double nose_x = cx + fx * half_len, nose_y = cy + fy * half_len;
    double tail_x = cx - fx * half_len, tail_y = cy - fy * half_len;
    clamp_point(nose_x, nose_y);
    clamp_point(tail_x, tail_y);
    spec.fuselage = {nose_x, nose_y, tail_x, tail_y, 0.45 + 0.15 * rng.next_double()};

    // wings leave the fuselage slightly behind the center, swept back
    const double wing_root_x = cx - fx * half_len * 0.1;
    const double wing_root_y = cy - fy * half_len * 0.1;
    const double sweep = 1.9 + 0.4 * rng.next_double(); // radians off the nose direction
    const double wing_len = extent * (0.55 + 0.2 * rng.next_double());
    for (int side = -1; side <= 1; side += 2) {
        const double wa = angle + side * sweep;
        double tip_x = wing_root_x + std::cos(wa) * wing_len;
        double tip_y = wing_root_y + std::sin(wa) * wing_len;
        clamp_point(tip_x, tip_y);
        spec.wings.push_back(
            {wing_root_x, wing_root_y, tip_x, tip_y, 0.55 + 0.2 * rng.next_double()});
        // one or two engines along this wing
        const int engines = 1 + static_cast<int>(rng.next_index(2));
        for (int e = 0; e < engines; ++e) {
            const double t = 0.35 + 0.3 * (e + rng.next_double());
            double ex = wing_root_x + (tip_x - wing_root_x) * std::min(t, 0.95);
            double ey = wing_root_y + (tip_y - wing_root_y) * std::min(t, 0.95);
            const double radius = 2.0 + rng.next_double();
            ex = std::clamp(ex, margin + radius, width - 1 - margin - radius);
            ey = std::clamp(ey, margin + radius, height - 1 - margin - radius);
            spec.engines.push_back({ex, ey, radius, 0.85 + 0.15 * rng.next_double()});
        }
    }

    // tail bar near the rear
    const double tail_len = wing_len * 0.45;
    for (int side = -1; side <= 1; side += 2) {
        const double ta = angle + side * (sweep + 0.3);
        double tip_x = tail_x + std::cos(ta) * tail_len;
        double tip_y = tail_y + std::sin(ta) * tail_len;
        clamp_point(tip_x, tip_y);
        spec.wings.push_back({tail_x, tail_y, tip_x, tip_y, 0.5 + 0.15 * rng.next_double()});
    }
    return spec;
}

struct SynthExtent {
    double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
};

/// Tight axis-aligned box around the rendered geometry, padded by `pad`
/// and clamped to the chip.
inline SynthExtent synth_extent(const SynthSpec& spec, double pad = 4.0) {
    SynthExtent e{spec.width - 1.0, spec.height - 1.0, 0.0, 0.0};
    auto grow = [&](double x, double y, double r) {
        e.x_min = std::min(e.x_min, x - r);
        e.y_min = std::min(e.y_min, y - r);
        e.x_max = std::max(e.x_max, x + r);
        e.y_max = std::max(e.y_max, y + r);
    };
    grow(spec.fuselage.x0, spec.fuselage.y0, 1.0);
    grow(spec.fuselage.x1, spec.fuselage.y1, 1.0);
    for (const auto& w : spec.wings) {
        grow(w.x0, w.y0, 1.0);
        grow(w.x1, w.y1, 1.0);
    }
    for (const auto& d : spec.engines)
        grow(d.cx, d.cy, d.radius);
    e.x_min = std::max(0.0, e.x_min - pad);
    e.y_min = std::max(0.0, e.y_min - pad);
    e.x_max = std::min(spec.width - 1.0, e.x_max + pad) + 1.0;
    e.y_max = std::min(spec.height - 1.0, e.y_max + pad) + 1.0;
    return e;
}

} // namespace pgd

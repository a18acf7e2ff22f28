#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "pgd/field.hpp"
#include "pgd/points.hpp"

namespace pgd {

/// One detection-head grid: downsample ratio and the resulting cell
/// dimensions, ceil(image / stride).
struct HeadSpec {
    int stride = 8;
    int map_height = 0;
    int map_width = 0;
};

inline HeadSpec make_head_spec(int image_height, int image_width, int stride) {
    if (stride != 4 && stride != 8 && stride != 16 && stride != 32)
        throw std::invalid_argument("HeadSpec: stride must be one of {4, 8, 16, 32}");
    if (image_height < 1 || image_width < 1)
        throw std::invalid_argument("HeadSpec: image dimensions must be positive");
    return {stride, (image_height + stride - 1) / stride, (image_width + stride - 1) / stride};
}

struct BBox {
    double x_min = 0.0, y_min = 0.0;
    double x_max = 0.0, y_max = 0.0;

    /// Half-open containment, matching discrete pixel coordinates.
    bool contains(double x, double y) const {
        return x >= x_min && x < x_max && y >= y_min && y < y_max;
    }
};

/// One annotated target: its box and the scattering points inside it.
struct InstanceAnnotation {
    BBox bbox;
    ScatterPointSet points;
};

inline void validate_instance(const InstanceAnnotation& inst) {
    if (!(inst.bbox.x_min < inst.bbox.x_max && inst.bbox.y_min < inst.bbox.y_max))
        throw std::invalid_argument("InstanceAnnotation: degenerate bbox");
    for (const auto& p : inst.points.points)
        if (!inst.bbox.contains(p.x, p.y))
            throw std::invalid_argument("InstanceAnnotation: point outside bbox");
}

/// Build an instance from a full-chip point set by keeping the points
/// inside the box.
inline InstanceAnnotation restrict_points(const BBox& bbox, const ScatterPointSet& points) {
    InstanceAnnotation inst;
    inst.bbox = bbox;
    for (const auto& p : points.points)
        if (bbox.contains(p.x, p.y))
            inst.points.points.push_back(p);
    return inst;
}

/// Per-head binary supervision map, entries exactly 0 or 1.
struct BinaryTargetMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;

    std::uint8_t at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
    std::uint8_t& at(int i, int j) { return values[static_cast<std::size_t>(i) * width + j]; }
};

struct AdaptiveTargetResult {
    BinaryTargetMap map;
    /// Indices of instances that had no points (they contribute no
    /// positives and are reported rather than failing the batch).
    std::vector<std::size_t> empty_instances;
};

namespace detail {

/// Pool an instance's points onto head cells: cell (floor(y/stride),
/// floor(x/stride)), multiple points in one cell keep the max response.
inline std::vector<std::pair<std::size_t, double>> pool_instance(const InstanceAnnotation& inst,
                                                                 const HeadSpec& head) {
    std::vector<double> pooled(static_cast<std::size_t>(head.map_height) * head.map_width, -1.0);
    for (const auto& p : inst.points.points) {
        const int r = static_cast<int>(std::floor(p.y / head.stride));
        const int c = static_cast<int>(std::floor(p.x / head.stride));
        if (r < 0 || r >= head.map_height || c < 0 || c >= head.map_width)
            continue;
        auto& cell = pooled[static_cast<std::size_t>(r) * head.map_width + c];
        cell = std::max(cell, p.response);
    }
    std::vector<std::pair<std::size_t, double>> cells;
    for (std::size_t idx = 0; idx < pooled.size(); ++idx)
        if (pooled[idx] >= 0.0)
            cells.emplace_back(idx, pooled[idx]);
    return cells;
}

} // namespace detail

/// Adaptive instance perception target: per instance, cells whose pooled
/// response reaches eta times that instance's maximum response are set to
/// 1; the union over instances is returned. The instance maximum always
/// passes the threshold, so every instance with at least one point yields
/// at least one positive cell.
inline AdaptiveTargetResult pgip_target_adaptive(const std::vector<InstanceAnnotation>& instances,
                                                 const HeadSpec& head, double eta) {
    if (!(eta >= 0.0 && eta <= 1.0))
        throw std::invalid_argument("pgip_target_adaptive: eta must be in [0, 1]");
    AdaptiveTargetResult result;
    result.map.height = head.map_height;
    result.map.width = head.map_width;
    result.map.values.assign(static_cast<std::size_t>(head.map_height) * head.map_width, 0);

    for (std::size_t j = 0; j < instances.size(); ++j) {
        const auto cells = detail::pool_instance(instances[j], head);
        if (cells.empty()) {
            result.empty_instances.push_back(j);
            continue;
        }
        double inst_max = 0.0;
        for (const auto& [idx, r] : cells)
            inst_max = std::max(inst_max, r);
        const double threshold = eta * inst_max;
        for (const auto& [idx, r] : cells)
            if (r >= threshold)
                result.map.values[idx] = 1;
    }
    return result;
}

/// Hard baseline: every cell whose center lies inside any box (half-open,
/// compared in pixel space at (col + 0.5) * stride, (row + 0.5) * stride)
/// is positive.
inline BinaryTargetMap pgip_target_hard(const std::vector<InstanceAnnotation>& instances,
                                        const HeadSpec& head) {
    BinaryTargetMap map;
    map.height = head.map_height;
    map.width = head.map_width;
    map.values.assign(static_cast<std::size_t>(head.map_height) * head.map_width, 0);
    for (int r = 0; r < head.map_height; ++r)
        for (int c = 0; c < head.map_width; ++c) {
            const double cx = (c + 0.5) * head.stride;
            const double cy = (r + 0.5) * head.stride;
            for (const auto& inst : instances)
                if (inst.bbox.contains(cx, cy)) {
                    map.at(r, c) = 1;
                    break;
                }
        }
    return map;
}

/// Truncated baseline: like adaptive but against one global absolute
/// threshold, so weak instances can vanish entirely.
inline BinaryTargetMap pgip_target_truncated(const std::vector<InstanceAnnotation>& instances,
                                             const HeadSpec& head, double global_tau) {
    if (global_tau < 0.0)
        throw std::invalid_argument("pgip_target_truncated: global_tau must be nonnegative");
    BinaryTargetMap map;
    map.height = head.map_height;
    map.width = head.map_width;
    map.values.assign(static_cast<std::size_t>(head.map_height) * head.map_width, 0);
    for (const auto& inst : instances)
        for (const auto& [idx, r] : detail::pool_instance(inst, head))
            if (r >= global_tau)
                map.values[idx] = 1;
    return map;
}

struct FocalConfig {
    double alpha_t = 0.25;
    double gamma = 2.0;
    double epsilon = 1e-7;
};

inline void validate_focal_config(const FocalConfig& cfg) {
    if (!(cfg.alpha_t > 0.0 && cfg.alpha_t <= 1.0))
        throw std::invalid_argument("FocalConfig: alpha_t must be in (0, 1]");
    if (cfg.gamma < 0.0)
        throw std::invalid_argument("FocalConfig: gamma must be nonnegative");
    if (!(cfg.epsilon > 0.0 && cfg.epsilon <= 1e-3))
        throw std::invalid_argument("FocalConfig: epsilon must be in (0, 1e-3]");
}

/// Alpha-balanced focal loss, mean over cells:
/// -alpha_t * (1 - p_t)^gamma * ln(p_t) with p_t = p for positive cells and
/// 1 - p otherwise. Predictions are clamped to [epsilon, 1 - epsilon].
inline double focal_loss(const Field& prediction, const BinaryTargetMap& target,
                         const FocalConfig& cfg) {
    validate_focal_config(cfg);
    if (prediction.height != target.height || prediction.width != target.width)
        throw std::invalid_argument("focal_loss: shape mismatch");
    const std::size_t n = prediction.values.size();
    double total = 0.0;
    for (std::size_t idx = 0; idx < n; ++idx) {
        const double p = std::clamp(prediction.values[idx], cfg.epsilon, 1.0 - cfg.epsilon);
        const double pt = target.values[idx] ? p : 1.0 - p;
        total += -cfg.alpha_t * std::pow(1.0 - pt, cfg.gamma) * std::log(pt);
    }
    return total / static_cast<double>(n);
}

/// Sum of per-head focal losses.
inline double pgip_loss(const std::vector<std::pair<Field, BinaryTargetMap>>& per_head,
                        const FocalConfig& cfg) {
    if (per_head.empty())
        throw std::invalid_argument("pgip_loss: no heads");
    double total = 0.0;
    for (const auto& [prediction, target] : per_head)
        total += focal_loss(prediction, target, cfg);
    return total;
}

/// Annotation sidecar: {"bboxes": [{"x_min": .., "y_min": .., "x_max": ..,
/// "y_max": .., "label": ".."}, ...]}.
struct BBoxAnnotation {
    BBox bbox;
    std::string label;
};

inline std::vector<BBoxAnnotation> annotations_from_json(const nlohmann::json& j) {
    std::vector<BBoxAnnotation> out;
    for (const auto& e : j.at("bboxes")) {
        BBoxAnnotation a;
        a.bbox.x_min = e.at("x_min").get<double>();
        a.bbox.y_min = e.at("y_min").get<double>();
        a.bbox.x_max = e.at("x_max").get<double>();
        a.bbox.y_max = e.at("y_max").get<double>();
        a.label = e.value("label", "other");
        if (!(a.bbox.x_min < a.bbox.x_max && a.bbox.y_min < a.bbox.y_max))
            throw std::invalid_argument("annotation: degenerate bbox");
        out.push_back(std::move(a));
    }
    return out;
}

inline nlohmann::json to_json(const std::vector<BBoxAnnotation>& annotations) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : annotations)
        arr.push_back({{"x_min", a.bbox.x_min},
                       {"y_min", a.bbox.y_min},
                       {"x_max", a.bbox.x_max},
                       {"y_max", a.bbox.y_max},
                       {"label", a.label}});
    return nlohmann::json{{"bboxes", std::move(arr)}};
}

} // namespace pgd

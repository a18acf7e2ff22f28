#pragma once

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgd/image.hpp"

namespace pgd {

/// One dominant scattering point: position (x = column, y = row), corner
/// response and the Gaussian scale it was detected at.
struct ScatterPoint {
    double x = 0.0;
    double y = 0.0;
    double response = 0.0;
    double scale = 0.0;
};

/// Points ordered by response descending; ties broken by (y, x) ascending.
struct ScatterPointSet {
    std::vector<ScatterPoint> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

inline bool point_order(const ScatterPoint& a, const ScatterPoint& b) {
    if (a.response != b.response)
        return a.response > b.response;
    if (a.y != b.y)
        return a.y < b.y;
    return a.x < b.x;
}

inline void sort_points(ScatterPointSet& set) {
    std::sort(set.points.begin(), set.points.end(), point_order);
}

inline nlohmann::json to_json(const ScatterPointSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : set.points)
        arr.push_back({{"x", p.x}, {"y", p.y}, {"response", p.response}, {"scale", p.scale}});
    return nlohmann::json{{"points", std::move(arr)}};
}

inline ScatterPointSet point_set_from_json(const nlohmann::json& j) {
    ScatterPointSet set;
    for (const auto& e : j.at("points")) {
        ScatterPoint p;
        p.x = e.at("x").get<double>();
        p.y = e.at("y").get<double>();
        p.response = e.at("response").get<double>();
        p.scale = e.at("scale").get<double>();
        if (p.response < 0.0)
            throw std::invalid_argument("ScatterPoint: negative response");
        set.points.push_back(p);
    }
    sort_points(set);
    return set;
}

inline void save_points(const std::string& path, const ScatterPointSet& set) {
    std::ofstream out(path);
    if (!out)
        throw io_error(path + ": cannot open for writing");
    out << to_json(set).dump() << "\n";
}

inline ScatterPointSet load_points(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw io_error(path + ": cannot open file");
    nlohmann::json j;
    in >> j;
    return point_set_from_json(j);
}

} // namespace pgd

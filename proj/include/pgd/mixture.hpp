#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgd/points.hpp"
#include "pgd/rng.hpp"

namespace pgd {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

/// Symmetric 2x2 matrix in (x, y) axes: [[xx, xy], [xy, yy]].
struct SymMat2 {
    double xx = 1.0;
    double xy = 0.0;
    double yy = 1.0;

    double det() const { return xx * yy - xy * xy; }

    /// Eigenvalues (closed form), smaller first.
    void eigenvalues(double& lo, double& hi) const {
        const double mean = 0.5 * (xx + yy);
        const double d = std::sqrt(0.25 * (xx - yy) * (xx - yy) + xy * xy);
        lo = mean - d;
        hi = mean + d;
    }
};

struct GaussianComponent {
    double weight = 1.0;
    Vec2 mean;
    SymMat2 covariance;
    int count = 0;
    bool singular = false;
};

/// Weight-sorted mixture; channel order of the structure heatmap follows
/// the component order here.
struct GaussianMixture {
    std::vector<GaussianComponent> components;

    std::size_t size() const { return components.size(); }
};

struct MixtureConfig {
    int k = 6;
    int max_iters = 200;
    double tol = 1e-6;
    double reg_eps = 1e-3;
    int singular_threshold = 4;
    double singular_cov = 2.0;
    std::uint64_t seed = 0;
};

inline void validate_mixture_config(const MixtureConfig& cfg) {
    if (cfg.k < 1)
        throw std::invalid_argument("MixtureConfig: k must be >= 1");
    if (!(cfg.tol > 0.0))
        throw std::invalid_argument("MixtureConfig: tol must be positive");
    if (!(cfg.reg_eps > 0.0))
        throw std::invalid_argument("MixtureConfig: reg_eps must be positive");
    if (cfg.singular_threshold < 1)
        throw std::invalid_argument("MixtureConfig: singular_threshold must be >= 1");
    if (cfg.max_iters < 1)
        throw std::invalid_argument("MixtureConfig: max_iters must be >= 1");
}

inline bool mixture_order(const GaussianComponent& a, const GaussianComponent& b) {
    if (a.weight != b.weight)
        return a.weight > b.weight;
    if (a.mean.x != b.mean.x)
        return a.mean.x < b.mean.x;
    return a.mean.y < b.mean.y;
}

/// Reorder components by weight descending; equal weights break ties by
/// mean, lexicographic on (x, y).
inline GaussianMixture sort_by_weight(GaussianMixture mixture) {
    std::stable_sort(mixture.components.begin(), mixture.components.end(), mixture_order);
    return mixture;
}

inline void validate_mixture(const GaussianMixture& mixture) {
    if (mixture.components.empty())
        throw std::invalid_argument("GaussianMixture: empty");
    double sum = 0.0;
    for (const auto& c : mixture.components) {
        sum += c.weight;
        if (c.covariance.det() <= 0.0 || c.covariance.xx <= 0.0)
            throw std::invalid_argument("GaussianMixture: covariance not positive definite");
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("GaussianMixture: weights must sum to 1");
    if (!std::is_sorted(mixture.components.begin(), mixture.components.end(),
                        [](const GaussianComponent& a, const GaussianComponent& b) {
                            return a.weight > b.weight;
                        }))
        throw std::invalid_argument("GaussianMixture: components not sorted by weight");
}

namespace detail {

/// log N(p | mean, cov) for the full bivariate normal.
inline double log_gauss2(const Vec2& p, const Vec2& mean, const SymMat2& cov) {
    const double det = cov.det();
    const double dx = p.x - mean.x;
    const double dy = p.y - mean.y;
    const double q = (cov.yy * dx * dx - 2.0 * cov.xy * dx * dy + cov.xx * dy * dy) / det;
    constexpr double log_2pi = 1.8378770664093454836;
    return -log_2pi - 0.5 * std::log(det) - 0.5 * q;
}

inline double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m))
        return m;
    double s = 0.0;
    for (double x : v)
        s += std::exp(x - m);
    return m + std::log(s);
}

/// k-means++ seeding: first center uniform, then squared-distance weighted.
inline std::vector<Vec2> kmeanspp_centers(const std::vector<Vec2>& pts, int k, SplitMix64& rng) {
    std::vector<Vec2> centers;
    centers.reserve(k);
    centers.push_back(pts[rng.next_index(pts.size())]);
    std::vector<double> d2(pts.size(), 0.0);
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) {
                const double dx = pts[i].x - c.x, dy = pts[i].y - c.y;
                best = std::min(best, dx * dx + dy * dy);
            }
            d2[i] = best;
            total += best;
        }
        std::size_t pick;
        if (total > 0.0) {
            const double target = rng.next_double() * total;
            double acc = 0.0;
            pick = pts.size() - 1;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                acc += d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.next_index(pts.size()); // all points coincide with a center
        }
        centers.push_back(pts[pick]);
    }
    return centers;
}

} // namespace detail

/// Sum over points of ln sum_k alpha_k * N(point | mu_k, Sigma_k), with the
/// full bivariate normal density.
inline double log_likelihood(const GaussianMixture& mixture, const ScatterPointSet& points) {
    if (points.empty())
        throw std::invalid_argument("log_likelihood: empty point set");
    if (mixture.components.empty())
        throw std::invalid_argument("log_likelihood: empty mixture");
    double ll = 0.0;
    std::vector<double> terms(mixture.components.size());
    for (const auto& p : points.points) {
        const Vec2 pos{p.x, p.y};
        for (std::size_t k = 0; k < mixture.components.size(); ++k) {
            const auto& c = mixture.components[k];
            terms[k] = std::log(c.weight) + detail::log_gauss2(pos, c.mean, c.covariance);
        }
        ll += detail::log_sum_exp(terms);
    }
    return ll;
}

/// Replace every component whose hard count is below `threshold` by a
/// fixed small Gaussian centered on the strongest point hard-assigned to
/// it: mean <- that point, covariance <- diag(cov_value), singular <- true.
/// Weights and counts are untouched. Hard assignment is by max posterior
/// under the incoming mixture, ties to the lower component index.
inline GaussianMixture apply_singular_rule(GaussianMixture mixture, const ScatterPointSet& points,
                                           int threshold = 4, double cov_value = 2.0) {
    if (mixture.components.empty())
        throw std::invalid_argument("apply_singular_rule: empty mixture");

    // strongest assigned point per component
    std::vector<const ScatterPoint*> champion(mixture.components.size(), nullptr);
    std::vector<double> terms(mixture.components.size());
    for (const auto& p : points.points) {
        const Vec2 pos{p.x, p.y};
        std::size_t best = 0;
        for (std::size_t k = 0; k < mixture.components.size(); ++k) {
            const auto& c = mixture.components[k];
            terms[k] = std::log(c.weight) + detail::log_gauss2(pos, c.mean, c.covariance);
            if (terms[k] > terms[best])
                best = k;
        }
        const ScatterPoint*& ch = champion[best];
        if (!ch || p.response > ch->response)
            ch = &p;
    }

    for (std::size_t k = 0; k < mixture.components.size(); ++k) {
        auto& c = mixture.components[k];
        if (c.count >= threshold)
            continue;
        if (!champion[k])
            throw std::runtime_error("apply_singular_rule: component " + std::to_string(k) +
                                     " flagged singular but has no assigned points");
        c.mean = {champion[k]->x, champion[k]->y};
        c.covariance = {cov_value, 0.0, cov_value};
        c.singular = true;
    }
    return mixture;
}

struct FitTrace {
    GaussianMixture mixture;
    /// Log-likelihood after each E-step, in iteration order.
    std::vector<double> log_likelihoods;
};

/// EM fit of a K-component Gaussian mixture over point coordinates
/// (responses do not weight the fit). k-means++ seeded initialization,
/// covariance regularization +reg_eps*I on every M-step, stop when the
/// absolute log-likelihood improvement drops below tol. Hard counts by max
/// posterior, then the singular rule and weight sorting are applied.
inline FitTrace fit_gmm_traced(const ScatterPointSet& points, const MixtureConfig& cfg) {
    validate_mixture_config(cfg);
    const std::size_t n = points.size();
    if (n == 0)
        throw std::invalid_argument("fit_gmm: empty point set");
    if (static_cast<std::size_t>(cfg.k) > n)
        throw std::invalid_argument("fit_gmm: fewer points than mixture components");

    std::vector<Vec2> pts(n);
    for (std::size_t i = 0; i < n; ++i)
        pts[i] = {points.points[i].x, points.points[i].y};

    // shared covariance init: sample covariance of all points + reg
    Vec2 mean_all{0.0, 0.0};
    for (const auto& p : pts) {
        mean_all.x += p.x;
        mean_all.y += p.y;
    }
    mean_all.x /= static_cast<double>(n);
    mean_all.y /= static_cast<double>(n);
    SymMat2 cov_all{0.0, 0.0, 0.0};
    for (const auto& p : pts) {
        const double dx = p.x - mean_all.x, dy = p.y - mean_all.y;
        cov_all.xx += dx * dx;
        cov_all.xy += dx * dy;
        cov_all.yy += dy * dy;
    }
    cov_all.xx = cov_all.xx / static_cast<double>(n) + cfg.reg_eps;
    cov_all.xy = cov_all.xy / static_cast<double>(n);
    cov_all.yy = cov_all.yy / static_cast<double>(n) + cfg.reg_eps;

    SplitMix64 rng(cfg.seed);
    const auto centers = detail::kmeanspp_centers(pts, cfg.k, rng);

    const int K = cfg.k;
    std::vector<GaussianComponent> comps(K);
    for (int k = 0; k < K; ++k) {
        comps[k].weight = 1.0 / K;
        comps[k].mean = centers[k];
        comps[k].covariance = cov_all;
    }

    std::vector<double> resp(n * K);
    std::vector<double> terms(K);
    std::vector<double> ll_trace;
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        // E-step
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (int k = 0; k < K; ++k)
                terms[k] = std::log(comps[k].weight) +
                           detail::log_gauss2(pts[i], comps[k].mean, comps[k].covariance);
            const double lse = detail::log_sum_exp(terms);
            ll += lse;
            for (int k = 0; k < K; ++k)
                resp[i * K + k] = std::exp(terms[k] - lse);
        }
        ll_trace.push_back(ll);
        if (iter > 0 && ll - prev_ll < cfg.tol)
            break;
        prev_ll = ll;

        // M-step
        for (int k = 0; k < K; ++k) {
            double nk = 0.0;
            Vec2 mu{0.0, 0.0};
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * K + k];
                nk += r;
                mu.x += r * pts[i].x;
                mu.y += r * pts[i].y;
            }
            comps[k].weight = nk / static_cast<double>(n);
            if (nk < 1e-12)
                continue; // starved component keeps its previous mean/cov
            mu.x /= nk;
            mu.y /= nk;
            SymMat2 cov{0.0, 0.0, 0.0};
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * K + k];
                const double dx = pts[i].x - mu.x, dy = pts[i].y - mu.y;
                cov.xx += r * dx * dx;
                cov.xy += r * dx * dy;
                cov.yy += r * dy * dy;
            }
            comps[k].mean = mu;
            comps[k].covariance = {cov.xx / nk + cfg.reg_eps, cov.xy / nk,
                                   cov.yy / nk + cfg.reg_eps};
        }
    }

    // hard counts by max posterior, ties to the lower index
    GaussianMixture mixture{std::move(comps)};
    for (const auto& p : points.points) {
        const Vec2 pos{p.x, p.y};
        std::size_t best = 0;
        double best_term = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < mixture.components.size(); ++k) {
            const auto& c = mixture.components[k];
            const double t = std::log(c.weight) + detail::log_gauss2(pos, c.mean, c.covariance);
            if (t > best_term) {
                best_term = t;
                best = k;
            }
        }
        mixture.components[best].count += 1;
    }

    mixture = apply_singular_rule(std::move(mixture), points, cfg.singular_threshold,
                                  cfg.singular_cov);
    mixture = sort_by_weight(std::move(mixture));
    return {std::move(mixture), std::move(ll_trace)};
}

inline GaussianMixture fit_gmm(const ScatterPointSet& points, const MixtureConfig& cfg) {
    return fit_gmm_traced(points, cfg).mixture;
}

inline nlohmann::json to_json(const GaussianMixture& mixture) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : mixture.components)
        arr.push_back({{"weight", c.weight},
                       {"mean", {c.mean.x, c.mean.y}},
                       {"cov", {{c.covariance.xx, c.covariance.xy},
                                {c.covariance.xy, c.covariance.yy}}},
                       {"count", c.count},
                       {"singular", c.singular}});
    return nlohmann::json{{"components", std::move(arr)}};
}

inline GaussianMixture mixture_from_json(const nlohmann::json& j) {
    GaussianMixture m;
    for (const auto& e : j.at("components")) {
        GaussianComponent c;
        c.weight = e.at("weight").get<double>();
        c.mean = {e.at("mean").at(0).get<double>(), e.at("mean").at(1).get<double>()};
        c.covariance = {e.at("cov").at(0).at(0).get<double>(), e.at("cov").at(0).at(1).get<double>(),
                        e.at("cov").at(1).at(1).get<double>()};
        c.count = e.at("count").get<int>();
        c.singular = e.at("singular").get<bool>();
        m.components.push_back(c);
    }
    validate_mixture(m);
    return m;
}

inline void save_mixture(const std::string& path, const GaussianMixture& mixture) {
    std::ofstream out(path);
    if (!out)
        throw io_error(path + ": cannot open for writing");
    out << to_json(mixture).dump() << "\n";
}

inline GaussianMixture load_mixture(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw io_error(path + ": cannot open file");
    nlohmann::json j;
    in >> j;
    return mixture_from_json(j);
}

} // namespace pgd

#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pgd/container.hpp"
#include "pgd/heatmap.hpp"
#include "pgd/manifest.hpp"
#include "pgd/mixture.hpp"
#include "pgd/pgip.hpp"
#include "pgd/scattering.hpp"

namespace pgd {

/// Batch preprocessing configuration; mirrors the JSON config document.
struct PipelineConfig {
    HarrisConfig harris;
    MixtureConfig mixture;
    int heatmap_downsample = 1;
    std::vector<int> head_strides = {8, 16, 32};
    double eta = 0.5;
    FocalConfig focal;
    int workers = 1;
    std::uint64_t seed = 0;
};

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    if (j.contains("harris")) {
        const auto& h = j.at("harris");
        cfg.harris.k = h.value("k", cfg.harris.k);
        if (h.contains("scales"))
            cfg.harris.scales = h.at("scales").get<std::vector<double>>();
        cfg.harris.nms_radius = h.value("nms_radius", cfg.harris.nms_radius);
        cfg.harris.response_floor = h.value("response_floor", cfg.harris.response_floor);
        cfg.harris.max_points = h.value("max_points", cfg.harris.max_points);
    }
    if (j.contains("mixture")) {
        const auto& m = j.at("mixture");
        cfg.mixture.k = m.value("k", cfg.mixture.k);
        cfg.mixture.max_iters = m.value("max_iters", cfg.mixture.max_iters);
        cfg.mixture.tol = m.value("tol", cfg.mixture.tol);
        cfg.mixture.reg_eps = m.value("reg_eps", cfg.mixture.reg_eps);
        cfg.mixture.singular_threshold = m.value("singular_threshold", cfg.mixture.singular_threshold);
        cfg.mixture.singular_cov = m.value("singular_cov", cfg.mixture.singular_cov);
    }
    if (j.contains("heatmap"))
        cfg.heatmap_downsample = j.at("heatmap").value("downsample", 1);
    if (j.contains("heads")) {
        cfg.head_strides.clear();
        for (const auto& h : j.at("heads"))
            cfg.head_strides.push_back(h.at("stride").get<int>());
    }
    cfg.eta = j.value("eta", cfg.eta);
    if (j.contains("focal")) {
        const auto& f = j.at("focal");
        cfg.focal.alpha_t = f.value("alpha_t", cfg.focal.alpha_t);
        cfg.focal.gamma = f.value("gamma", cfg.focal.gamma);
        cfg.focal.epsilon = f.value("epsilon", cfg.focal.epsilon);
    }
    cfg.workers = j.value("workers", cfg.workers);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw io_error(path + ": cannot open file");
    nlohmann::json j;
    in >> j;
    return pipeline_config_from_json(j);
}

inline void validate_pipeline_config(const PipelineConfig& cfg) {
    validate_harris_config(cfg.harris);
    validate_mixture_config(cfg.mixture);
    validate_focal_config(cfg.focal);
    if (cfg.heatmap_downsample < 1)
        throw std::invalid_argument("PipelineConfig: heatmap downsample must be >= 1");
    for (int s : cfg.head_strides)
        if (s != 4 && s != 8 && s != 16 && s != 32)
            throw std::invalid_argument("PipelineConfig: head stride must be one of {4, 8, 16, 32}");
    if (cfg.workers < 1)
        throw std::invalid_argument("PipelineConfig: workers must be >= 1");
    if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0))
        throw std::invalid_argument("PipelineConfig: eta must be in [0, 1]");
}

struct ChipRecord {
    std::string chip_path;
    bool ok = false;
    std::string failed_stage; // empty when ok
    std::string message;
    int points = 0;
    int components = 0;
    std::vector<std::string> artifacts;
};

struct RunReport {
    std::vector<ChipRecord> chips; // manifest order
    int succeeded = 0;
    int failed = 0;
    std::int64_t wall_ms = 0;
};

/// Downsampled copy of a mixture: means scaled by 1/factor, covariances by
/// 1/factor^2, matching a heatmap grid sampled every `factor` pixels.
inline GaussianMixture scale_mixture(GaussianMixture m, int factor) {
    const double s = 1.0 / static_cast<double>(factor);
    for (auto& c : m.components) {
        c.mean.x *= s;
        c.mean.y *= s;
        c.covariance.xx *= s * s;
        c.covariance.xy *= s * s;
        c.covariance.yy *= s * s;
    }
    return m;
}

namespace detail {

inline std::string stage_artifact(const std::string& rel, const char* suffix) {
    return rel + suffix;
}

inline ChipRecord process_chip(const Manifest& manifest, const ManifestEntry& entry,
                               const PipelineConfig& cfg,
                               const std::filesystem::path& out_root, std::mutex& fs_mutex) {
    namespace fs = std::filesystem;
    ChipRecord rec;
    rec.chip_path = entry.chip_path;
    const fs::path src = fs::path(manifest.root) / entry.chip_path;
    const fs::path dst_base = out_root / entry.chip_path;
    {
        std::lock_guard<std::mutex> lock(fs_mutex);
        fs::create_directories(dst_base.parent_path());
    }

    ImageChip chip;
    try {
        chip = load_chip(src.string());
    } catch (const std::exception& e) {
        rec.failed_stage = "load";
        rec.message = e.what();
        return rec;
    }

    ScatterPointSet points;
    try {
        points = extract_points(chip, cfg.harris);
        const std::string out = stage_artifact(dst_base.string(), ".points.json");
        save_points(out, points);
        rec.points = static_cast<int>(points.size());
        rec.artifacts.push_back(stage_artifact(entry.chip_path, ".points.json"));
    } catch (const std::exception& e) {
        rec.failed_stage = "points";
        rec.message = e.what();
        return rec;
    }

    GaussianMixture mixture;
    try {
        MixtureConfig mix_cfg = cfg.mixture;
        mix_cfg.seed = derive_seed(cfg.seed, entry.chip_path);
        mixture = fit_gmm(points, mix_cfg);
        const std::string out = stage_artifact(dst_base.string(), ".mixture.json");
        save_mixture(out, mixture);
        rec.components = static_cast<int>(mixture.size());
        rec.artifacts.push_back(stage_artifact(entry.chip_path, ".mixture.json"));
    } catch (const std::exception& e) {
        rec.failed_stage = "gmm";
        rec.message = e.what();
        return rec;
    }

    try {
        const int ds = cfg.heatmap_downsample;
        const int hh = (chip.height + ds - 1) / ds;
        const int hw = (chip.width + ds - 1) / ds;
        const HeatmapStack stack = heatmap_stack(ds == 1 ? mixture : scale_mixture(mixture, ds), hh, hw);
        const std::string out = stage_artifact(dst_base.string(), ".heatmap.pgdh");
        save_container(out, stack);
        rec.artifacts.push_back(stage_artifact(entry.chip_path, ".heatmap.pgdh"));
    } catch (const std::exception& e) {
        rec.failed_stage = "heatmap";
        rec.message = e.what();
        return rec;
    }

    if (entry.annotations) {
        try {
            std::vector<InstanceAnnotation> instances;
            for (const auto& a : *entry.annotations)
                instances.push_back(restrict_points(a.bbox, points));
            for (int stride : cfg.head_strides) {
                const HeadSpec head = make_head_spec(chip.height, chip.width, stride);
                const auto result = pgip_target_adaptive(instances, head, cfg.eta);
                HeatmapStack as_stack;
                as_stack.channels = 1;
                as_stack.height = result.map.height;
                as_stack.width = result.map.width;
                as_stack.values.assign(result.map.values.begin(), result.map.values.end());
                const std::string suffix = ".pgip_s" + std::to_string(stride) + ".pgdh";
                save_container(dst_base.string() + suffix, as_stack);
                rec.artifacts.push_back(entry.chip_path + suffix);
            }
        } catch (const std::exception& e) {
            rec.failed_stage = "pgip";
            rec.message = e.what();
            return rec;
        }
    }

    rec.ok = true;
    return rec;
}

} // namespace detail

/// Run the preprocessing batch: per chip, scattering points JSON, mixture
/// JSON, PGDH heatmap and (when annotated) per-head PGIP target maps are
/// written under `out_dir`, mirroring the source tree. A failing chip is
/// recorded and never aborts the batch. Output bytes are independent of
/// the worker count: per-chip seeds derive from (seed, chip path) and the
/// report keeps manifest order.
inline RunReport run_preprocess(const Manifest& manifest, const PipelineConfig& cfg,
                                const std::string& out_dir) {
    validate_pipeline_config(cfg);
    namespace fs = std::filesystem;
    const fs::path out_root(out_dir);
    std::error_code ec;
    fs::create_directories(out_root, ec);
    if (!fs::is_directory(out_root))
        throw io_error(out_dir + ": output directory not writable");

    const auto start = std::chrono::steady_clock::now();
    RunReport report;
    report.chips.resize(manifest.entries.size());

    std::mutex fs_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= manifest.entries.size())
                break;
            report.chips[idx] =
                detail::process_chip(manifest, manifest.entries[idx], cfg, out_root, fs_mutex);
        }
    };

    const int n_workers = std::min<int>(cfg.workers, std::max<std::size_t>(manifest.entries.size(), 1));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (int i = 0; i < n_workers; ++i)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }

    for (const auto& rec : report.chips)
        rec.ok ? ++report.succeeded : ++report.failed;
    report.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    return report;
}

/// JSON-lines report: one record per chip in manifest order, then a
/// summary record. Wall time appears only in the summary.
inline void write_report(std::ostream& out, const RunReport& report) {
    for (const auto& rec : report.chips) {
        nlohmann::json j{{"chip", rec.chip_path}, {"ok", rec.ok}};
        if (rec.ok) {
            j["points"] = rec.points;
            j["components"] = rec.components;
            j["artifacts"] = rec.artifacts;
        } else {
            j["stage"] = rec.failed_stage;
            j["error"] = rec.message;
        }
        out << j.dump() << "\n";
    }
    out << nlohmann::json{{"summary", true},
                          {"succeeded", report.succeeded},
                          {"failed", report.failed},
                          {"wall_ms", report.wall_ms}}
               .dump()
        << "\n";
}

} // namespace pgd

// pgd-prep: supervision-generation CLI.
//
// Subcommands: synth, points, gmm, heatmap, pgip, fuse-check, run, render.
// Exit codes: 0 success, 1 partial failures, 2 invalid input.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pgd/container.hpp"
#include "pgd/fusion_io.hpp"
#include "pgd/gradcheck.hpp"
#include "pgd/heatmap.hpp"
#include "pgd/manifest.hpp"
#include "pgd/mixture.hpp"
#include "pgd/pgfe.hpp"
#include "pgd/pgip.hpp"
#include "pgd/pipeline.hpp"
#include "pgd/scattering.hpp"
#include "pgd/synth.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_synth(int count, std::uint64_t seed, const std::string& out_dir, int height, int width,
              double clutter) {
    fs::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        const auto spec = pgd::random_airplane_spec(pgd::derive_seed(seed, std::to_string(i)),
                                                    height, width, clutter);
        const auto result = pgd::synth_chip(spec);
        char name[32];
        std::snprintf(name, sizeof(name), "chip_%04d", i);
        const fs::path base = fs::path(out_dir) / name;
        pgd::save_pgm8(base.string() + ".pgm", result.chip);

        const auto extent = pgd::synth_extent(spec);
        std::vector<pgd::BBoxAnnotation> annotations{
            {{extent.x_min, extent.y_min, extent.x_max, extent.y_max}, "other"}};
        std::ofstream side(base.string() + ".json");
        side << pgd::to_json(annotations).dump() << "\n";
    }
    std::cout << "wrote " << count << " chips under " << out_dir << "\n";
    return 0;
}

int cmd_points(const std::string& chip_path, const std::string& config_path,
               const std::string& out_path) {
    pgd::HarrisConfig cfg;
    if (!config_path.empty())
        cfg = pgd::load_pipeline_config(config_path).harris;
    const auto chip = pgd::load_chip(chip_path);
    const auto points = pgd::extract_points(chip, cfg);
    if (out_path.empty())
        std::cout << pgd::to_json(points).dump() << "\n";
    else
        pgd::save_points(out_path, points);
    return 0;
}

int cmd_gmm(const std::string& points_path, int k, std::uint64_t seed,
            const std::string& out_path) {
    const auto points = pgd::load_points(points_path);
    pgd::MixtureConfig cfg;
    cfg.k = k;
    cfg.seed = seed;
    const auto mixture = pgd::fit_gmm(points, cfg);
    if (out_path.empty())
        std::cout << pgd::to_json(mixture).dump() << "\n";
    else
        pgd::save_mixture(out_path, mixture);
    return 0;
}

int cmd_heatmap(const std::string& mixture_path, int height, int width, int downsample,
                const std::string& out_path) {
    auto mixture = pgd::load_mixture(mixture_path);
    int hh = height, hw = width;
    if (downsample > 1) {
        mixture = pgd::scale_mixture(std::move(mixture), downsample);
        hh = (height + downsample - 1) / downsample;
        hw = (width + downsample - 1) / downsample;
    }
    pgd::save_container(out_path, pgd::heatmap_stack(mixture, hh, hw));
    return 0;
}

int cmd_pgip(const std::string& annotations_path, const std::string& points_path, int stride,
             double eta, const std::string& mode, double tau, int height, int width,
             const std::string& out_path) {
    std::ifstream in(annotations_path);
    if (!in)
        throw pgd::io_error(annotations_path + ": cannot open file");
    nlohmann::json j;
    in >> j;
    const auto annotations = pgd::annotations_from_json(j);

    pgd::ScatterPointSet points;
    if (!points_path.empty())
        points = pgd::load_points(points_path);

    std::vector<pgd::InstanceAnnotation> instances;
    for (const auto& a : annotations)
        instances.push_back(pgd::restrict_points(a.bbox, points));

    const pgd::HeadSpec head = pgd::make_head_spec(height, width, stride);
    pgd::BinaryTargetMap map;
    int exit_code = 0;
    if (mode == "adaptive") {
        auto result = pgd::pgip_target_adaptive(instances, head, eta);
        map = std::move(result.map);
        for (std::size_t idx : result.empty_instances) {
            std::cerr << "warning: instance " << idx << " has no scattering points\n";
            exit_code = 1;
        }
    } else if (mode == "hard") {
        map = pgd::pgip_target_hard(instances, head);
    } else if (mode == "truncated") {
        map = pgd::pgip_target_truncated(instances, head, tau);
    } else {
        throw std::invalid_argument("pgip: mode must be adaptive|hard|truncated");
    }

    pgd::HeatmapStack stack;
    stack.channels = 1;
    stack.height = map.height;
    stack.width = map.width;
    stack.values.assign(map.values.begin(), map.values.end());
    pgd::save_container(out_path, stack);
    return exit_code;
}

int cmd_fuse_check(std::uint64_t seed, int instances) {
    const auto report = pgd::run_fuse_check(seed, instances);
    std::cout << "instances: " << instances << "\n"
              << "entries checked: " << report.entries_checked << "\n"
              << "max |analytic - numeric|: " << report.max_abs_error << "\n"
              << "max relative error: " << report.max_rel_error << "\n";
    if (!report.worst_entry.empty())
        std::cout << "worst entry: " << report.worst_entry << "\n";
    const bool ok = report.max_rel_error < 1e-4;
    std::cout << (ok ? "PASS" : "FAIL") << " (tolerance 1e-4)\n";
    return ok ? 0 : 1;
}

int cmd_run(const std::string& manifest_dir, const std::string& config_path,
            const std::string& out_dir, int workers, std::uint64_t seed, bool seed_given,
            const std::string& report_path) {
    pgd::PipelineConfig cfg;
    if (!config_path.empty())
        cfg = pgd::load_pipeline_config(config_path);
    if (workers > 0)
        cfg.workers = workers;
    if (seed_given)
        cfg.seed = seed;

    const auto manifest = pgd::build_manifest(manifest_dir);
    const auto report = pgd::run_preprocess(manifest, cfg, out_dir);

    if (report_path.empty() || report_path == "-") {
        pgd::write_report(std::cout, report);
    } else {
        std::ofstream out(report_path);
        if (!out)
            throw pgd::io_error(report_path + ": cannot open for writing");
        pgd::write_report(out, report);
    }
    std::cerr << report.succeeded << "/" << report.chips.size() << " chips processed in "
              << report.wall_ms << " ms\n";
    return report.failed == 0 ? 0 : 1;
}

int cmd_render(const std::string& heatmap_path, const std::string& chip_path,
               const std::string& out_path) {
    const auto chip = pgd::load_chip(chip_path);
    const auto stack = pgd::load_container(heatmap_path);

    // channel-max overlay, upsampled to chip resolution when needed
    pgd::FeatureMap heat(1, stack.height, stack.width);
    for (int i = 0; i < stack.height; ++i)
        for (int j = 0; j < stack.width; ++j) {
            double m = 0.0;
            for (int k = 0; k < stack.channels; ++k)
                m = std::max(m, stack.at(k, i, j));
            heat.at(0, i, j) = m;
        }
    heat = pgd::resample_features(heat, chip.height, chip.width);

    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(chip.height) * chip.width * 3);
    for (int i = 0; i < chip.height; ++i)
        for (int j = 0; j < chip.width; ++j) {
            const double g = chip.at(i, j);
            const double m = std::clamp(heat.at(0, i, j), 0.0, 1.0);
            const double r = g * (1.0 - m) + m;              // heat lights up red
            const double gr = g * (1.0 - m) + 0.35 * m;      // and a little orange
            const double b = g * (1.0 - m);
            const std::size_t base = (static_cast<std::size_t>(i) * chip.width + j) * 3;
            rgb[base] = static_cast<std::uint8_t>(std::lround(255.0 * r));
            rgb[base + 1] = static_cast<std::uint8_t>(std::lround(255.0 * gr));
            rgb[base + 2] = static_cast<std::uint8_t>(std::lround(255.0 * b));
        }
    pgd::save_png_rgb8(out_path, chip.height, chip.width, rgb);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Physics-guided supervision generation for SAR airplane detection"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate synthetic SAR-airplane chips");
    int synth_count = 10;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    int synth_h = 256, synth_w = 192;
    double synth_clutter = 0.02;
    synth->add_option("--count", synth_count, "Number of chips");
    synth->add_option("--seed", synth_seed, "Base seed");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--height", synth_h, "Chip height");
    synth->add_option("--width", synth_w, "Chip width");
    synth->add_option("--clutter", synth_clutter, "Clutter sigma");

    // points
    auto* points = app.add_subcommand("points", "Extract scattering points from a chip");
    std::string points_in, points_cfg, points_out;
    points->add_option("--in", points_in, "Chip raster (PGM/PNG)")->required();
    points->add_option("--config", points_cfg, "Pipeline config JSON");
    points->add_option("--out", points_out, "Output JSON (default stdout)");

    // gmm
    auto* gmm = app.add_subcommand("gmm", "Fit the structure-distribution mixture");
    std::string gmm_points, gmm_out;
    int gmm_k = 6;
    std::uint64_t gmm_seed = 0;
    gmm->add_option("--points", gmm_points, "Points JSON")->required();
    gmm->add_option("--k", gmm_k, "Component count");
    gmm->add_option("--seed", gmm_seed, "Seed");
    gmm->add_option("--out", gmm_out, "Output JSON (default stdout)");

    // heatmap
    auto* heatmap = app.add_subcommand("heatmap", "Render the K-channel heatmap container");
    std::string hm_mixture, hm_out;
    int hm_h = 256, hm_w = 192, hm_ds = 1;
    heatmap->add_option("--mixture", hm_mixture, "Mixture JSON")->required();
    heatmap->add_option("--height", hm_h, "Image height")->required();
    heatmap->add_option("--width", hm_w, "Image width")->required();
    heatmap->add_option("--downsample", hm_ds, "Downsample factor (default 1: full resolution)");
    heatmap->add_option("--out", hm_out, "Output PGDH path")->required();

    // pgip
    auto* pgip = app.add_subcommand("pgip", "Build per-head instance-perception targets");
    std::string pgip_ann, pgip_points, pgip_mode = "adaptive", pgip_out;
    int pgip_stride = 8, pgip_h = 256, pgip_w = 192;
    double pgip_eta = 0.5, pgip_tau = 0.5;
    pgip->add_option("--annotations", pgip_ann, "Annotation sidecar JSON")->required();
    pgip->add_option("--points", pgip_points, "Points JSON");
    pgip->add_option("--stride", pgip_stride, "Head stride (4/8/16/32)");
    pgip->add_option("--eta", pgip_eta, "Adaptive threshold in [0,1]");
    pgip->add_option("--mode", pgip_mode, "adaptive|hard|truncated");
    pgip->add_option("--tau", pgip_tau, "Global threshold (truncated mode)");
    pgip->add_option("--height", pgip_h, "Image height");
    pgip->add_option("--width", pgip_w, "Image width");
    pgip->add_option("--out", pgip_out, "Output PGDH path")->required();

    // fuse-check
    auto* fuse = app.add_subcommand("fuse-check", "Verify fusion-block gradients");
    std::uint64_t fuse_seed = 0;
    int fuse_instances = 20;
    fuse->add_option("--seed", fuse_seed, "Base seed");
    fuse->add_option("--instances", fuse_instances, "Instance count");

    // run
    auto* run = app.add_subcommand("run", "Batch preprocessing over a manifest directory");
    std::string run_manifest, run_config, run_out, run_report;
    int run_workers = 0;
    std::uint64_t run_seed = 0;
    run->add_option("--manifest", run_manifest, "Input directory")->required();
    run->add_option("--config", run_config, "Pipeline config JSON");
    run->add_option("--out", run_out, "Output directory")->required();
    run->add_option("--workers", run_workers, "Worker threads (overrides config)");
    auto* seed_opt = run->add_option("--seed", run_seed, "Global seed (overrides config)");
    run->add_option("--report", run_report, "Report path (JSON lines; default stdout)");

    // render
    auto* render = app.add_subcommand("render", "Overlay a heatmap on a chip as PNG");
    std::string render_heat, render_chip, render_out;
    render->add_option("--heatmap", render_heat, "PGDH container")->required();
    render->add_option("--chip", render_chip, "Chip raster")->required();
    render->add_option("--out", render_out, "Output PNG")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(synth_count, synth_seed, synth_out, synth_h, synth_w, synth_clutter);
        if (points->parsed())
            return cmd_points(points_in, points_cfg, points_out);
        if (gmm->parsed())
            return cmd_gmm(gmm_points, gmm_k, gmm_seed, gmm_out);
        if (heatmap->parsed())
            return cmd_heatmap(hm_mixture, hm_h, hm_w, hm_ds, hm_out);
        if (pgip->parsed())
            return cmd_pgip(pgip_ann, pgip_points, pgip_stride, pgip_eta, pgip_mode, pgip_tau,
                            pgip_h, pgip_w, pgip_out);
        if (fuse->parsed())
            return cmd_fuse_check(fuse_seed, fuse_instances);
        if (run->parsed())
            return cmd_run(run_manifest, run_config, run_out, run_workers, run_seed,
                           seed_opt->count() > 0, run_report);
        if (render->parsed())
            return cmd_render(render_heat, render_chip, render_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

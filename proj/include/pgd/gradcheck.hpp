#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pgd/pgfe.hpp"
#include "pgd/rng.hpp"

namespace pgd {

/// Central finite-difference verification of pgfe_grad. The scalar probe
/// is sum(upstream .* pgfe_forward(...)), whose exact gradient is what
/// pgfe_grad returns; every parameter and input entry is perturbed by
/// +/- step and compared against the analytic value.
struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_entry;
    std::size_t entries_checked = 0;
};

namespace detail {

inline double probe(const FeatureMap& f_n, const FeatureMap& f_p, const FusionParams& params,
                    int window, const FeatureMap& upstream) {
    const FeatureMap out = pgfe_forward(f_n, f_p, params, window);
    double s = 0.0;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        s += upstream.values[i] * out.values[i];
    return s;
}

inline void compare_entry(double analytic, double numeric, const std::string& name,
                          GradCheckReport& report) {
    const double diff = std::abs(analytic - numeric);
    const double denom = std::max(std::abs(analytic), std::abs(numeric));
    report.max_abs_error = std::max(report.max_abs_error, diff);
    // near-zero pairs are compared absolutely to avoid 0/0 noise
    const double rel = denom < 1e-6 ? 0.0 : diff / denom;
    if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_entry = name;
    }
    report.entries_checked += 1;
}

} // namespace detail

inline GradCheckReport check_fusion_gradients(const FeatureMap& f_n, const FeatureMap& f_p,
                                              const FusionParams& params, int window,
                                              const FeatureMap& upstream, double step = 1e-5) {
    const FusionGradients analytic = pgfe_grad(f_n, f_p, params, window, upstream);
    GradCheckReport report;

    auto central = [&](std::function<double&(FusionParams&)> select) {
        FusionParams p = params;
        double& slot = select(p);
        const double orig = slot;
        slot = orig + step;
        const double hi = detail::probe(f_n, f_p, p, window, upstream);
        slot = orig - step;
        const double lo = detail::probe(f_n, f_p, p, window, upstream);
        slot = orig;
        return (hi - lo) / (2.0 * step);
    };

    detail::compare_entry(analytic.lambda,
                          central([](FusionParams& p) -> double& { return p.lambda; }), "lambda",
                          report);
    detail::compare_entry(analytic.alpha,
                          central([](FusionParams& p) -> double& { return p.alpha; }), "alpha",
                          report);
    detail::compare_entry(analytic.beta, central([](FusionParams& p) -> double& { return p.beta; }),
                          "beta", report);
    detail::compare_entry(analytic.gamma,
                          central([](FusionParams& p) -> double& { return p.gamma; }), "gamma",
                          report);
    detail::compare_entry(analytic.delta,
                          central([](FusionParams& p) -> double& { return p.delta; }), "delta",
                          report);

    auto check_vector = [&](const std::vector<double>& grad,
                            std::vector<double> FusionParams::* member, const char* name) {
        for (std::size_t idx = 0; idx < grad.size(); ++idx) {
            const double numeric =
                central([member, idx](FusionParams& p) -> double& { return (p.*member)[idx]; });
            detail::compare_entry(grad[idx], numeric, std::string(name) + "[" + std::to_string(idx) + "]",
                                  report);
        }
    };
    check_vector(analytic.w_q_proj, &FusionParams::w_q_proj, "w_q_proj");
    check_vector(analytic.w_linear, &FusionParams::w_linear, "w_linear");
    check_vector(analytic.b_linear, &FusionParams::b_linear, "b_linear");
    check_vector(analytic.ffn_w1, &FusionParams::ffn_w1, "ffn_w1");
    check_vector(analytic.ffn_b1, &FusionParams::ffn_b1, "ffn_b1");
    check_vector(analytic.ffn_w2, &FusionParams::ffn_w2, "ffn_w2");
    check_vector(analytic.ffn_b2, &FusionParams::ffn_b2, "ffn_b2");

    auto check_input = [&](const FeatureMap& input, const FeatureMap& grad, bool is_fn,
                           const char* name) {
        for (std::size_t idx = 0; idx < input.values.size(); ++idx) {
            FeatureMap perturbed = input;
            perturbed.values[idx] = input.values[idx] + step;
            const double hi = is_fn ? detail::probe(perturbed, f_p, params, window, upstream)
                                    : detail::probe(f_n, perturbed, params, window, upstream);
            perturbed.values[idx] = input.values[idx] - step;
            const double lo = is_fn ? detail::probe(perturbed, f_p, params, window, upstream)
                                    : detail::probe(f_n, perturbed, params, window, upstream);
            detail::compare_entry(grad.values[idx], (hi - lo) / (2.0 * step),
                                  std::string(name) + "[" + std::to_string(idx) + "]", report);
        }
    };
    check_input(f_n, analytic.d_f_n, true, "f_n");
    check_input(f_p, analytic.d_f_p, false, "f_p");
    return report;
}

/// One seeded random fusion instance for the gradient suite
/// (C = 3, C_P = 2, H = W = 4, window 2).
struct FuseCheckInstance {
    FeatureMap f_n;
    FeatureMap f_p;
    FusionParams params;
    FeatureMap upstream;
    int window = 2;
};

inline FuseCheckInstance make_fuse_check_instance(std::uint64_t seed) {
    FuseCheckInstance inst;
    SplitMix64 rng(seed);
    const int C = 3, Cp = 2, H = 4, W = 4;
    inst.params = init_fusion_params(C, Cp, rng.next_u64());
    // interior lambda keeps the clamp boundary out of the difference stencil
    inst.params.lambda = 0.2 + 0.6 * rng.next_double();
    inst.params.alpha = 0.5 + rng.next_double();
    inst.params.beta = 0.2 + 0.5 * rng.next_double();
    inst.params.gamma = 0.5 + rng.next_double();
    inst.params.delta = 0.2 + 0.5 * rng.next_double();
    auto fill_map = [&](FeatureMap& m, int c) {
        m = FeatureMap(c, H, W);
        for (double& v : m.values)
            v = rng.next_normal();
    };
    fill_map(inst.f_n, C);
    fill_map(inst.f_p, Cp);
    fill_map(inst.upstream, C);
    return inst;
}

inline GradCheckReport run_fuse_check(std::uint64_t base_seed, int instances = 20,
                                      double step = 1e-5) {
    GradCheckReport total;
    for (int i = 0; i < instances; ++i) {
        const auto inst = make_fuse_check_instance(base_seed + static_cast<std::uint64_t>(i));
        const auto report =
            check_fusion_gradients(inst.f_n, inst.f_p, inst.params, inst.window, inst.upstream, step);
        if (report.max_rel_error > total.max_rel_error) {
            total.max_rel_error = report.max_rel_error;
            total.worst_entry = report.worst_entry + " (seed " +
                                std::to_string(base_seed + static_cast<std::uint64_t>(i)) + ")";
        }
        total.max_abs_error = std::max(total.max_abs_error, report.max_abs_error);
        total.entries_checked += report.entries_checked;
    }
    return total;
}

} // namespace pgd

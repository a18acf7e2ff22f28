#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pgd/rng.hpp"

namespace pgd {

/// C x H x W feature volume, channel-major then row-major.
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    FeatureMap() = default;
    FeatureMap(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          values(static_cast<std::size_t>(c) * h * w, fill) {}

    double at(int c, int i, int j) const {
        return values[(static_cast<std::size_t>(c) * height + i) * width + j];
    }
    double& at(int c, int i, int j) {
        return values[(static_cast<std::size_t>(c) * height + i) * width + j];
    }

    bool same_shape(const FeatureMap& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

inline void validate_feature_map(const FeatureMap& f, const char* what) {
    if (f.channels < 1 || f.height < 1 || f.width < 1)
        throw std::invalid_argument(std::string(what) + ": dimensions must be >= 1");
    if (f.values.size() != static_cast<std::size_t>(f.channels) * f.height * f.width)
        throw std::invalid_argument(std::string(what) + ": buffer does not match dimensions");
    for (double v : f.values)
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(what) + ": non-finite value");
}

/// Dense row-major matrix used for token sequences and attention weights.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0)
        : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Token sequence from non-overlapping window pooling; tokens are ordered
/// row-major over the ceil(H/window) x ceil(W/window) grid.
struct PooledTokens {
    int grid_rows = 0;
    int grid_cols = 0;
    Mat tokens; // T x C
};

/// Windowed compression of Eq-style lambda * AvgP + (1 - lambda) * MaxP,
/// per channel over non-overlapping windows (border windows are smaller).
inline PooledTokens pooled_compress(const FeatureMap& f, double lambda, int window) {
    if (window < 1)
        throw std::invalid_argument("pooled_compress: window must be >= 1");
    PooledTokens out;
    out.grid_rows = (f.height + window - 1) / window;
    out.grid_cols = (f.width + window - 1) / window;
    out.tokens = Mat(out.grid_rows * out.grid_cols, f.channels);
    for (int tr = 0; tr < out.grid_rows; ++tr) {
        for (int tc = 0; tc < out.grid_cols; ++tc) {
            const int i0 = tr * window, i1 = std::min(i0 + window, f.height);
            const int j0 = tc * window, j1 = std::min(j0 + window, f.width);
            const int t = tr * out.grid_cols + tc;
            for (int c = 0; c < f.channels; ++c) {
                double sum = 0.0;
                double mx = f.at(c, i0, j0);
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) {
                        const double v = f.at(c, i, j);
                        sum += v;
                        mx = std::max(mx, v);
                    }
                const double mean = sum / static_cast<double>((i1 - i0) * (j1 - j0));
                out.tokens.at(t, c) = lambda * mean + (1.0 - lambda) * mx;
            }
        }
    }
    return out;
}

namespace detail {

/// Source coordinate for bilinear resampling, align-corners = false:
/// src = (dst + 0.5) * (in_size / out_size) - 0.5, clamped to
/// [0, in_size - 1]. Returns the floor index and the fractional weight.
inline void bilinear_coord(int dst, int in_size, int out_size, int& lo, double& frac) {
    double src = (dst + 0.5) * (static_cast<double>(in_size) / out_size) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    lo = static_cast<int>(std::floor(src));
    if (lo > in_size - 2)
        lo = std::max(0, in_size - 2);
    frac = src - lo;
}

} // namespace detail

/// Bilinear resampling per channel (align-corners = false; see
/// detail::bilinear_coord for the exact coordinate mapping).
inline FeatureMap resample_features(const FeatureMap& f, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1)
        throw std::invalid_argument("resample_features: target dims must be >= 1");
    if (f.height == target_h && f.width == target_w)
        return f;
    FeatureMap out(f.channels, target_h, target_w);
    for (int i = 0; i < target_h; ++i) {
        int i0;
        double fy;
        detail::bilinear_coord(i, f.height, target_h, i0, fy);
        const int i1 = std::min(i0 + 1, f.height - 1);
        for (int j = 0; j < target_w; ++j) {
            int j0;
            double fx;
            detail::bilinear_coord(j, f.width, target_w, j0, fx);
            const int j1 = std::min(j0 + 1, f.width - 1);
            for (int c = 0; c < f.channels; ++c)
                out.at(c, i, j) = (1.0 - fy) * ((1.0 - fx) * f.at(c, i0, j0) + fx * f.at(c, i0, j1)) +
                                  fy * ((1.0 - fx) * f.at(c, i1, j0) + fx * f.at(c, i1, j1));
        }
    }
    return out;
}

/// Adjoint of resample_features: scatters output-pixel gradients back to
/// the input grid with the same bilinear weights.
inline FeatureMap resample_features_backward(const FeatureMap& d_out, int in_h, int in_w) {
    if (d_out.height == in_h && d_out.width == in_w)
        return d_out;
    FeatureMap d_in(d_out.channels, in_h, in_w);
    for (int i = 0; i < d_out.height; ++i) {
        int i0;
        double fy;
        detail::bilinear_coord(i, in_h, d_out.height, i0, fy);
        const int i1 = std::min(i0 + 1, in_h - 1);
        for (int j = 0; j < d_out.width; ++j) {
            int j0;
            double fx;
            detail::bilinear_coord(j, in_w, d_out.width, j0, fx);
            const int j1 = std::min(j0 + 1, in_w - 1);
            for (int c = 0; c < d_out.channels; ++c) {
                const double g = d_out.at(c, i, j);
                d_in.at(c, i0, j0) += (1.0 - fy) * (1.0 - fx) * g;
                d_in.at(c, i0, j1) += (1.0 - fy) * fx * g;
                d_in.at(c, i1, j0) += fy * (1.0 - fx) * g;
                d_in.at(c, i1, j1) += fy * fx * g;
            }
        }
    }
    return d_in;
}

/// Row-wise softmax(Q K^T / sqrt(d_K)) V with max-subtraction; also
/// exposes the attention weights for the backward pass.
inline Mat cross_attention_weights(const Mat& q, const Mat& k, double d_k) {
    if (q.cols != k.cols)
        throw std::invalid_argument("cross_attention: Q/K channel mismatch");
    if (!(d_k > 0.0))
        throw std::invalid_argument("cross_attention: d_K must be positive");
    const double scale = 1.0 / std::sqrt(d_k);
    Mat w(q.rows, k.rows);
    for (int i = 0; i < q.rows; ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k.rows; ++j) {
            double s = 0.0;
            for (int c = 0; c < q.cols; ++c)
                s += q.at(i, c) * k.at(j, c);
            s *= scale;
            w.at(i, j) = s;
            row_max = std::max(row_max, s);
        }
        double denom = 0.0;
        for (int j = 0; j < k.rows; ++j) {
            w.at(i, j) = std::exp(w.at(i, j) - row_max);
            denom += w.at(i, j);
        }
        for (int j = 0; j < k.rows; ++j)
            w.at(i, j) /= denom;
    }
    return w;
}

inline Mat cross_attention(const Mat& q, const Mat& k, const Mat& v, double d_k) {
    if (k.rows != v.rows)
        throw std::invalid_argument("cross_attention: K/V token mismatch");
    const Mat w = cross_attention_weights(q, k, d_k);
    Mat z(q.rows, v.cols);
    for (int i = 0; i < q.rows; ++i)
        for (int c = 0; c < v.cols; ++c) {
            double s = 0.0;
            for (int j = 0; j < v.rows; ++j)
                s += w.at(i, j) * v.at(j, c);
            z.at(i, c) = s;
        }
    return z;
}

/// All learnable quantities of the fusion block. Matrix layouts follow the
/// right-multiplication convention y = x * W:
///   w_q_proj  C_P x C   projects resampled physics features to C channels
///   w_linear  C x C     + b_linear[C]
///   ffn_w1    C x C_h   + ffn_b1[C_h], ReLU, then
///   ffn_w2    C_h x C   + ffn_b2[C]
/// d_K equals the token channel count C.
struct FusionParams {
    int channels = 0;
    int physics_channels = 0;
    int hidden = 0;
    double lambda = 0.5;
    double alpha = 1.0;
    double beta = 0.1;
    double gamma = 1.0;
    double delta = 1.0;
    std::vector<double> w_q_proj;
    std::vector<double> w_linear;
    std::vector<double> b_linear;
    std::vector<double> ffn_w1;
    std::vector<double> ffn_b1;
    std::vector<double> ffn_w2;
    std::vector<double> ffn_b2;
};

inline void validate_fusion_params(const FusionParams& p) {
    if (p.channels < 1 || p.physics_channels < 1 || p.hidden < 1)
        throw std::invalid_argument("FusionParams: dims must be >= 1");
    const auto expect = [](const std::vector<double>& v, std::size_t n, const char* what) {
        if (v.size() != n)
            throw std::invalid_argument(std::string("FusionParams: ") + what + " has wrong size");
        for (double x : v)
            if (!std::isfinite(x))
                throw std::invalid_argument(std::string("FusionParams: ") + what + " non-finite");
    };
    const std::size_t c = p.channels, cp = p.physics_channels, ch = p.hidden;
    expect(p.w_q_proj, cp * c, "w_q_proj");
    expect(p.w_linear, c * c, "w_linear");
    expect(p.b_linear, c, "b_linear");
    expect(p.ffn_w1, c * ch, "ffn_w1");
    expect(p.ffn_b1, ch, "ffn_b1");
    expect(p.ffn_w2, ch * c, "ffn_w2");
    expect(p.ffn_b2, c, "ffn_b2");
    if (!(p.lambda >= 0.0 && p.lambda <= 1.0))
        throw std::invalid_argument("FusionParams: lambda must be in [0, 1]");
    for (double s : {p.alpha, p.beta, p.gamma, p.delta})
        if (!std::isfinite(s))
            throw std::invalid_argument("FusionParams: non-finite scalar");
}

/// Fresh parameters near the bypass identity: alpha = gamma = 1,
/// beta = 0.1, delta = 1, lambda = 0.5, weights ~ N(0, 1/fan_in), biases 0.
inline FusionParams init_fusion_params(int channels, int physics_channels, std::uint64_t seed,
                                       int hidden = 0) {
    FusionParams p;
    p.channels = channels;
    p.physics_channels = physics_channels;
    p.hidden = hidden > 0 ? hidden : 2 * channels;
    SplitMix64 rng(seed);
    auto fill = [&](std::vector<double>& v, std::size_t n, int fan_in) {
        v.resize(n);
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& x : v)
            x = scale * rng.next_normal();
    };
    fill(p.w_q_proj, static_cast<std::size_t>(physics_channels) * channels, physics_channels);
    fill(p.w_linear, static_cast<std::size_t>(channels) * channels, channels);
    p.b_linear.assign(channels, 0.0);
    fill(p.ffn_w1, static_cast<std::size_t>(channels) * p.hidden, channels);
    p.ffn_b1.assign(p.hidden, 0.0);
    fill(p.ffn_w2, static_cast<std::size_t>(p.hidden) * channels, p.hidden);
    p.ffn_b2.assign(channels, 0.0);
    validate_fusion_params(p);
    return p;
}

/// Intermediates kept for the backward pass.
struct PgfeCache {
    FeatureMap fp_resampled;
    FeatureMap fp_projected;
    PooledTokens pooled_n; // K and V
    PooledTokens pooled_q; // Q
    Mat attn;
    Mat z_att;
    FeatureMap z_att_up;
    FeatureMap linear_out;
    FeatureMap z_temp;
    FeatureMap ffn_hidden_pre;
    FeatureMap ffn_out;
    FeatureMap output;
};

namespace detail {

inline FeatureMap tokens_to_map(const Mat& tokens, int grid_rows, int grid_cols) {
    FeatureMap m(tokens.cols, grid_rows, grid_cols);
    for (int t = 0; t < tokens.rows; ++t)
        for (int c = 0; c < tokens.cols; ++c)
            m.at(c, t / grid_cols, t % grid_cols) = tokens.at(t, c);
    return m;
}

inline Mat map_to_tokens(const FeatureMap& m) {
    Mat tokens(m.height * m.width, m.channels);
    for (int i = 0; i < m.height; ++i)
        for (int j = 0; j < m.width; ++j)
            for (int c = 0; c < m.channels; ++c)
                tokens.at(i * m.width + j, c) = m.at(c, i, j);
    return tokens;
}

} // namespace detail

/// Fusion forward pass, Eq-style chain:
///   f_p -> resample to f_n dims -> project to C channels (query path)
///   V = K = pooled_compress(f_n), Q = pooled_compress(projected f_p)
///   Z_att = Softmax(Q K^T / sqrt(C)) V, upsampled back to H x W
///   Z_temp = beta * Linear(Z_att) + alpha * f_n
///   out    = delta * FFN(Z_temp) + gamma * Z_temp
inline PgfeCache pgfe_forward_cached(const FeatureMap& f_n, const FeatureMap& f_p,
                                     const FusionParams& params, int window) {
    validate_feature_map(f_n, "pgfe_forward: f_n");
    validate_feature_map(f_p, "pgfe_forward: f_p");
    validate_fusion_params(params);
    if (window < 1)
        throw std::invalid_argument("pgfe_forward: window must be >= 1");
    if (f_n.channels != params.channels)
        throw std::invalid_argument("pgfe_forward: f_n channel mismatch");
    if (f_p.channels != params.physics_channels)
        throw std::invalid_argument("pgfe_forward: f_p channel mismatch");

    const int C = params.channels;
    const int H = f_n.height, W = f_n.width;
    PgfeCache cache;

    cache.fp_resampled = resample_features(f_p, H, W);

    cache.fp_projected = FeatureMap(C, H, W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int cp = 0; cp < params.physics_channels; ++cp)
                    s += cache.fp_resampled.at(cp, i, j) * params.w_q_proj[cp * C + c];
                cache.fp_projected.at(c, i, j) = s;
            }

    cache.pooled_n = pooled_compress(f_n, params.lambda, window);
    cache.pooled_q = pooled_compress(cache.fp_projected, params.lambda, window);

    cache.attn =
        cross_attention_weights(cache.pooled_q.tokens, cache.pooled_n.tokens, static_cast<double>(C));
    cache.z_att = Mat(cache.pooled_q.tokens.rows, C);
    for (int t = 0; t < cache.z_att.rows; ++t)
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int u = 0; u < cache.pooled_n.tokens.rows; ++u)
                s += cache.attn.at(t, u) * cache.pooled_n.tokens.at(u, c);
            cache.z_att.at(t, c) = s;
        }

    const FeatureMap z_att_map =
        detail::tokens_to_map(cache.z_att, cache.pooled_q.grid_rows, cache.pooled_q.grid_cols);
    cache.z_att_up = resample_features(z_att_map, H, W);

    cache.linear_out = FeatureMap(C, H, W);
    cache.z_temp = FeatureMap(C, H, W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int co = 0; co < C; ++co) {
                double s = params.b_linear[co];
                for (int ci = 0; ci < C; ++ci)
                    s += cache.z_att_up.at(ci, i, j) * params.w_linear[ci * C + co];
                cache.linear_out.at(co, i, j) = s;
                cache.z_temp.at(co, i, j) = params.beta * s + params.alpha * f_n.at(co, i, j);
            }

    const int Ch = params.hidden;
    cache.ffn_hidden_pre = FeatureMap(Ch, H, W);
    cache.ffn_out = FeatureMap(C, H, W);
    cache.output = FeatureMap(C, H, W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            for (int h = 0; h < Ch; ++h) {
                double s = params.ffn_b1[h];
                for (int c = 0; c < C; ++c)
                    s += cache.z_temp.at(c, i, j) * params.ffn_w1[c * Ch + h];
                cache.ffn_hidden_pre.at(h, i, j) = s;
            }
            for (int c = 0; c < C; ++c) {
                double s = params.ffn_b2[c];
                for (int h = 0; h < Ch; ++h) {
                    const double pre = cache.ffn_hidden_pre.at(h, i, j);
                    if (pre > 0.0)
                        s += pre * params.ffn_w2[h * C + c];
                }
                cache.ffn_out.at(c, i, j) = s;
                cache.output.at(c, i, j) =
                    params.delta * s + params.gamma * cache.z_temp.at(c, i, j);
            }
        }
    return cache;
}

inline FeatureMap pgfe_forward(const FeatureMap& f_n, const FeatureMap& f_p,
                               const FusionParams& params, int window) {
    return pgfe_forward_cached(f_n, f_p, params, window).output;
}

/// Gradients of pgfe_forward with respect to every parameter and both
/// inputs. Shapes mirror FusionParams / the inputs exactly.
struct FusionGradients {
    double lambda = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double delta = 0.0;
    std::vector<double> w_q_proj;
    std::vector<double> w_linear;
    std::vector<double> b_linear;
    std::vector<double> ffn_w1;
    std::vector<double> ffn_b1;
    std::vector<double> ffn_w2;
    std::vector<double> ffn_b2;
    FeatureMap d_f_n;
    FeatureMap d_f_p;
};

namespace detail {

/// Adjoint of pooled_compress. Average pooling distributes lambda / count
/// to every window cell; max pooling routes (1 - lambda) to the first
/// maximal element in row-major scan order. Accumulates the lambda
/// gradient sum of g * (mean - max).
inline void pooled_compress_backward(const FeatureMap& input, const Mat& d_tokens, int window,
                                     double lambda, int grid_rows, int grid_cols,
                                     FeatureMap& d_input, double& d_lambda) {
    for (int tr = 0; tr < grid_rows; ++tr) {
        for (int tc = 0; tc < grid_cols; ++tc) {
            const int i0 = tr * window, i1 = std::min(i0 + window, input.height);
            const int j0 = tc * window, j1 = std::min(j0 + window, input.width);
            const int t = tr * grid_cols + tc;
            const double inv_count = 1.0 / static_cast<double>((i1 - i0) * (j1 - j0));
            for (int c = 0; c < input.channels; ++c) {
                const double g = d_tokens.at(t, c);
                double sum = 0.0;
                double mx = input.at(c, i0, j0);
                int mi = i0, mj = j0;
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) {
                        const double v = input.at(c, i, j);
                        sum += v;
                        if (v > mx) {
                            mx = v;
                            mi = i;
                            mj = j;
                        }
                    }
                const double mean = sum * inv_count;
                d_lambda += g * (mean - mx);
                if (g == 0.0)
                    continue;
                const double avg_share = lambda * inv_count * g;
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j)
                        d_input.at(c, i, j) += avg_share;
                d_input.at(c, mi, mj) += (1.0 - lambda) * g;
            }
        }
    }
}

} // namespace detail

inline FusionGradients pgfe_grad(const FeatureMap& f_n, const FeatureMap& f_p,
                                 const FusionParams& params, int window,
                                 const FeatureMap& upstream) {
    const PgfeCache cache = pgfe_forward_cached(f_n, f_p, params, window);
    if (!upstream.same_shape(cache.output))
        throw std::invalid_argument("pgfe_grad: upstream shape mismatch");

    const int C = params.channels;
    const int Cp = params.physics_channels;
    const int Ch = params.hidden;
    const int H = f_n.height, W = f_n.width;

    FusionGradients g;
    g.w_q_proj.assign(params.w_q_proj.size(), 0.0);
    g.w_linear.assign(params.w_linear.size(), 0.0);
    g.b_linear.assign(params.b_linear.size(), 0.0);
    g.ffn_w1.assign(params.ffn_w1.size(), 0.0);
    g.ffn_b1.assign(params.ffn_b1.size(), 0.0);
    g.ffn_w2.assign(params.ffn_w2.size(), 0.0);
    g.ffn_b2.assign(params.ffn_b2.size(), 0.0);
    g.d_f_n = FeatureMap(C, H, W);
    g.d_f_p = FeatureMap(Cp, f_p.height, f_p.width);

    // output = delta * ffn_out + gamma * z_temp
    FeatureMap d_z_temp(C, H, W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            // FFN backward per position
            for (int h = 0; h < Ch; ++h) {
                const double pre = cache.ffn_hidden_pre.at(h, i, j);
                if (pre <= 0.0)
                    continue; // ReLU gate (derivative 0 at 0)
                double dh = 0.0;
                for (int c = 0; c < C; ++c)
                    dh += params.ffn_w2[h * C + c] * params.delta * upstream.at(c, i, j);
                g.ffn_b1[h] += dh;
                for (int c = 0; c < C; ++c) {
                    g.ffn_w1[c * Ch + h] += cache.z_temp.at(c, i, j) * dh;
                    d_z_temp.at(c, i, j) += params.ffn_w1[c * Ch + h] * dh;
                }
            }
            for (int c = 0; c < C; ++c) {
                const double u = upstream.at(c, i, j);
                g.delta += u * cache.ffn_out.at(c, i, j);
                g.gamma += u * cache.z_temp.at(c, i, j);
                d_z_temp.at(c, i, j) += params.gamma * u;
                const double d_ffn_out = params.delta * u;
                g.ffn_b2[c] += d_ffn_out;
                for (int h = 0; h < Ch; ++h) {
                    const double pre = cache.ffn_hidden_pre.at(h, i, j);
                    if (pre > 0.0)
                        g.ffn_w2[h * C + c] += pre * d_ffn_out;
                }
            }
        }

    // z_temp = beta * linear_out + alpha * f_n
    FeatureMap d_z_att_up(C, H, W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int co = 0; co < C; ++co) {
                const double dz = d_z_temp.at(co, i, j);
                g.beta += dz * cache.linear_out.at(co, i, j);
                g.alpha += dz * f_n.at(co, i, j);
                g.d_f_n.at(co, i, j) += params.alpha * dz;
                const double d_lin = params.beta * dz;
                g.b_linear[co] += d_lin;
                for (int ci = 0; ci < C; ++ci) {
                    g.w_linear[ci * C + co] += cache.z_att_up.at(ci, i, j) * d_lin;
                    d_z_att_up.at(ci, i, j) += params.w_linear[ci * C + co] * d_lin;
                }
            }

    // upsampling adjoint back onto the token grid
    const FeatureMap d_z_att_map = resample_features_backward(
        d_z_att_up, cache.pooled_q.grid_rows, cache.pooled_q.grid_cols);
    const Mat d_z_att = detail::map_to_tokens(d_z_att_map);

    // attention backward: z_att = attn * V, attn = softmax(Q K^T / sqrt(C))
    const Mat& v = cache.pooled_n.tokens;
    const int Tq = cache.pooled_q.tokens.rows;
    const int Tk = v.rows;
    Mat d_v(Tk, C);
    Mat d_scores(Tq, Tk);
    for (int t = 0; t < Tq; ++t) {
        double row_dot = 0.0;
        std::vector<double> d_attn_row(Tk);
        for (int u = 0; u < Tk; ++u) {
            double da = 0.0;
            for (int c = 0; c < C; ++c) {
                da += d_z_att.at(t, c) * v.at(u, c);
                d_v.at(u, c) += cache.attn.at(t, u) * d_z_att.at(t, c);
            }
            d_attn_row[u] = da;
            row_dot += da * cache.attn.at(t, u);
        }
        for (int u = 0; u < Tk; ++u)
            d_scores.at(t, u) = cache.attn.at(t, u) * (d_attn_row[u] - row_dot);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));
    Mat d_q(Tq, C);
    Mat d_k(Tk, C);
    for (int t = 0; t < Tq; ++t)
        for (int u = 0; u < Tk; ++u) {
            const double ds = d_scores.at(t, u) * scale;
            if (ds == 0.0)
                continue;
            for (int c = 0; c < C; ++c) {
                d_q.at(t, c) += ds * cache.pooled_n.tokens.at(u, c);
                d_k.at(u, c) += ds * cache.pooled_q.tokens.at(t, c);
            }
        }

    // V and K are the same pooled tensor
    Mat d_pooled_n = d_v;
    for (int u = 0; u < Tk; ++u)
        for (int c = 0; c < C; ++c)
            d_pooled_n.at(u, c) += d_k.at(u, c);

    detail::pooled_compress_backward(f_n, d_pooled_n, window, params.lambda,
                                     cache.pooled_n.grid_rows, cache.pooled_n.grid_cols, g.d_f_n,
                                     g.lambda);
    FeatureMap d_fp_projected(C, H, W);
    detail::pooled_compress_backward(cache.fp_projected, d_q, window, params.lambda,
                                     cache.pooled_q.grid_rows, cache.pooled_q.grid_cols,
                                     d_fp_projected, g.lambda);

    // projection backward
    FeatureMap d_fp_resampled(Cp, H, W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int cp = 0; cp < Cp; ++cp) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double dp = d_fp_projected.at(c, i, j);
                    g.w_q_proj[cp * C + c] += cache.fp_resampled.at(cp, i, j) * dp;
                    acc += params.w_q_proj[cp * C + c] * dp;
                }
                d_fp_resampled.at(cp, i, j) = acc;
            }

    g.d_f_p = resample_features_backward(d_fp_resampled, f_p.height, f_p.width);
    return g;
}

} // namespace pgd

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "warpfield/field.hpp"
#include "warpfield/landmarks.hpp"
#include "warpfield/rng.hpp"
#include "warpfield/volume.hpp"

namespace warpfield {

struct SynthConfig {
    Dims3 dims{36, 48, 40};
    double max_disp = 5.0;  // max Euclidean displacement, voxels
    int landmark_count = 20;
    std::uint64_t seed = 0;
};

struct SynthPair {
    Volume moving;                 // base image
    Volume fixed;                  // base warped by the true field
    DisplacementField true_field;  // registering moving to fixed should recover this
    LandmarkSet fixed_landmarks;   // random interior points p
    LandmarkSet moving_landmarks;  // p + true_field(p)
    double pre_mae = 0.0;          // mean true-field magnitude at the landmarks
};

namespace detail {

struct GaussianBump {
    Vec3 center;
    Vec3 width;  // per-axis standard deviation, voxels
    Vec3 amp;    // per-component amplitude
};

inline double bump_profile(const GaussianBump& b, const Vec3& p) {
    double e = 0.0;
    for (int d = 0; d < 3; ++d) {
        const double t = (p[d] - b.center[d]) / b.width[d];
        e += t * t;
    }
    return std::exp(-0.5 * e);
}

inline Vec3 eval_bumps(const std::vector<GaussianBump>& bumps, const Vec3& p) {
    Vec3 out{0.0, 0.0, 0.0};
    for (const auto& b : bumps) {
        const double g = bump_profile(b, p);
        for (int c = 0; c < 3; ++c) out[c] += b.amp[c] * g;
    }
    return out;
}

// max over the grid of |x| e^{-x^2/2} is e^{-1/2}; gives an analytic bound on
// each Jacobian entry of a bump sum.
inline double gradient_bound(const std::vector<GaussianBump>& bumps) {
    constexpr double kPeakSlope = 0.60653065971263342;  // e^{-1/2}
    double worst = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 3; ++d) {
            double acc = 0.0;
            for (const auto& b : bumps) acc += std::abs(b.amp[c]) * kPeakSlope / b.width[d];
            worst = std::max(worst, acc);
        }
    return worst;
}

}  // namespace detail

/// Smooth random blobs on a gentle three-axis ramp; every local window has
/// non-degenerate intensity variance.
inline Volume make_synth_volume(const Dims3& dims, std::uint64_t seed) {
    std::mt19937_64 g(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    std::vector<detail::GaussianBump> blobs;
    for (int k = 0; k < 10; ++k) {
        detail::GaussianBump b;
        for (int d = 0; d < 3; ++d) {
            b.center[d] = uniform(g, 0.1 * dims[d], 0.9 * dims[d]);
            b.width[d] = uniform(g, 0.08, 0.2) * dims[d];
        }
        const double a = uniform(g, -0.35, 0.35);
        b.amp = {a, a, a};
        blobs.push_back(b);
    }
    Volume v(dims);
    std::size_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
                double val = 0.55 + 0.004 * (x - 0.5 * dims[0]) + 0.003 * (y - 0.5 * dims[1]) +
                             0.0035 * (z - 0.5 * dims[2]);
                val += detail::eval_bumps(blobs, p)[0];
                v.data[i] = val;
            }
    return v;
}

/// Smooth ground-truth field: one wide dominant bump plus small detail bumps,
/// with every Jacobian entry analytically bounded below 1/3 so det(I+grad) is
/// positive everywhere (Gershgorin). Throws when max_disp cannot be reached
/// under that bound for these dims.
inline DisplacementField make_synth_field(const Dims3& dims, double max_disp, std::uint64_t seed) {
    if (!(max_disp >= 0.0)) throw std::invalid_argument("max_disp must be non-negative");
    DisplacementField f(dims);
    if (max_disp == 0.0) return f;

    std::mt19937_64 g(seed * 0x9e3779b97f4a7c15ULL + 0x853c49e6748fea9bULL);

    // dominant bump: budget 0.20 of gradient bound, 0.8 of displacement
    Vec3 u;
    double n2 = 0.0;
    do {
        for (int c = 0; c < 3; ++c) u[c] = uniform(g, -1.0, 1.0);
        n2 = norm2(u);
    } while (n2 < 0.05);
    const double inv_n = 1.0 / std::sqrt(n2);
    const double a_main = 0.8 * max_disp;
    double u_max = 0.0;
    for (int c = 0; c < 3; ++c) {
        u[c] *= inv_n;
        u_max = std::max(u_max, std::abs(u[c]));
    }

    detail::GaussianBump main;
    constexpr double kPeakSlope = 0.60653065971263342;
    const double width_needed = a_main * u_max * kPeakSlope / 0.20;
    for (int d = 0; d < 3; ++d) {
        main.width[d] = std::max(0.33 * dims[d], width_needed);
        if (main.width[d] > 0.48 * dims[d])
            throw std::domain_error("max-disp infeasible for dims");
        main.center[d] = uniform(g, 0.35 * dims[d], 0.65 * dims[d]);
        main.amp[d] = a_main * u[d];
    }

    // detail bumps: budget 0.11 of gradient bound, 0.2 of displacement
    std::vector<detail::GaussianBump> detail_bumps;
    for (int k = 0; k < 3; ++k) {
        detail::GaussianBump b;
        for (int d = 0; d < 3; ++d) {
            b.center[d] = uniform(g, 0.2 * dims[d], 0.8 * dims[d]);
            b.width[d] = uniform(g, 0.18, 0.28) * dims[d];
        }
        for (int c = 0; c < 3; ++c) b.amp[c] = uniform(g, -1.0, 1.0);
        detail_bumps.push_back(b);
    }
    double detail_peak = 0.0;
    for (const auto& b : detail_bumps) detail_peak += norm(b.amp);
    const double bound = detail::gradient_bound(detail_bumps);
    double eta = 0.11 / bound;
    if (detail_peak > 0.0) eta = std::min(eta, 0.2 * max_disp / detail_peak);
    for (auto& b : detail_bumps)
        for (int c = 0; c < 3; ++c) b.amp[c] *= eta;

    detail_bumps.push_back(main);
    std::size_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i)
                f.vectors[i] = detail::eval_bumps(
                    detail_bumps, Vec3{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
    return f;
}

/// Full synthetic registration pair with paired landmarks and known truth.
inline SynthPair make_synth_pair(const SynthConfig& cfg) {
    if (cfg.landmark_count < 0) throw std::invalid_argument("landmark_count must be non-negative");
    for (int d = 0; d < 3; ++d)
        if (cfg.dims[d] < 5) throw std::domain_error("dims too small for synthetic pair");

    SynthPair out;
    out.moving = make_synth_volume(cfg.dims, cfg.seed);
    out.true_field = make_synth_field(cfg.dims, cfg.max_disp, cfg.seed);
    out.fixed = warp_volume(out.moving, out.true_field);

    // landmark sites at fractional coordinates; displacements come from the
    // emitted field itself so pairs exactly satisfy m = p + F(p)
    std::mt19937_64 lm_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 0xda3e39cb94b95bdbULL);
    for (int k = 0; k < cfg.landmark_count; ++k) {
        Vec3 p;
        for (int d = 0; d < 3; ++d) p[d] = uniform(lm_rng, 1.5, cfg.dims[d] - 2.5);
        const Vec3 disp =
            cfg.max_disp == 0.0 ? Vec3{0.0, 0.0, 0.0} : sample_field(out.true_field, p);
        out.fixed_landmarks.points.push_back({k, p});
        out.moving_landmarks.points.push_back({k, p + disp});
        out.pre_mae += norm(disp);
    }
    if (cfg.landmark_count > 0) out.pre_mae /= cfg.landmark_count;
    return out;
}

}  // namespace warpfield

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "warpfield/vec3.hpp"

namespace warpfield {

/// Dense 3D scalar grid. Voxel centers sit at integer coordinates,
/// memory order is x-fastest: index = x + nx*(y + ny*z).
struct Volume {
    Dims3 dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};       // mm per voxel, informational
    std::vector<double> data;

    Volume() = default;
    Volume(Dims3 d, double fill = 0.0, Vec3 sp = {1.0, 1.0, 1.0})
        : dims(d), spacing(sp), data(checked_size(d), fill) {}
    Volume(Dims3 d, std::vector<double> values, Vec3 sp = {1.0, 1.0, 1.0})
        : dims(d), spacing(sp), data(std::move(values)) {
        if (data.size() != checked_size(d))
            throw std::invalid_argument("volume data length does not match dims");
    }

    static std::size_t checked_size(Dims3 d) {
        if (d[0] < 1 || d[1] < 1 || d[2] < 1)
            throw std::invalid_argument("volume dims must be positive");
        return static_cast<std::size_t>(d[0]) * d[1] * d[2];
    }

    std::size_t size() const { return data.size(); }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(dims[0]) * (y + static_cast<std::size_t>(dims[1]) * z);
    }
    double& at(int x, int y, int z) { return data[index(x, y, z)]; }
    double at(int x, int y, int z) const { return data[index(x, y, z)]; }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
    }
};

inline bool same_dims(const Dims3& a, const Dims3& b) { return a == b; }

/// Half-open index range per axis; start may be negative and stop may exceed
/// the source extent, in which case the out-of-source voxels are zero.
struct CropRegion {
    std::array<int, 3> start{0, 0, 0};
    std::array<int, 3> stop{0, 0, 0};
};

inline Volume crop_pad(const Volume& v, const CropRegion& region) {
    Dims3 out_dims;
    for (int a = 0; a < 3; ++a) {
        out_dims[a] = region.stop[a] - region.start[a];
        if (out_dims[a] < 1) throw std::invalid_argument("degenerate region");
    }
    Volume out(out_dims, 0.0, v.spacing);
    for (int z = 0; z < out_dims[2]; ++z) {
        const int sz = z + region.start[2];
        if (sz < 0 || sz >= v.dims[2]) continue;
        for (int y = 0; y < out_dims[1]; ++y) {
            const int sy = y + region.start[1];
            if (sy < 0 || sy >= v.dims[1]) continue;
            for (int x = 0; x < out_dims[0]; ++x) {
                const int sx = x + region.start[0];
                if (sx < 0 || sx >= v.dims[0]) continue;
                out.at(x, y, z) = v.at(sx, sy, sz);
            }
        }
    }
    return out;
}

/// Affine rescale of intensities to [0,1]. A constant volume maps to all
/// zeros so later similarity terms never divide by zero.
inline Volume minmax_normalize(const Volume& v) {
    const auto [mn_it, mx_it] = std::minmax_element(v.data.begin(), v.data.end());
    const double mn = *mn_it, mx = *mx_it;
    Volume out(v.dims, 0.0, v.spacing);
    if (mx > mn) {
        const double inv = 1.0 / (mx - mn);
        for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = (v.data[i] - mn) * inv;
    }
    return out;
}

namespace detail {

struct AxisSample {
    int i0 = 0, i1 = 0;
    double frac = 0.0;
    bool clamped = false;  // coordinate fell outside [0, n-1]
};

inline AxisSample axis_sample(double p, int n) {
    AxisSample s;
    s.clamped = (p < 0.0) || (p > static_cast<double>(n - 1));
    if (n == 1) return s;
    const double c = std::clamp(p, 0.0, static_cast<double>(n - 1));
    int i = static_cast<int>(std::floor(c));
    if (i > n - 2) i = n - 2;
    s.i0 = i;
    s.i1 = i + 1;
    s.frac = c - static_cast<double>(i);
    return s;
}

}  // namespace detail

struct SampleGrad {
    double value = 0.0;
    Vec3 grad{0.0, 0.0, 0.0};  // d value / d coordinate; zero along clamped axes
};

/// Trilinear blend of the 8 voxels surrounding p; coordinates outside the
/// grid are clamped to the boundary (border replication).
inline SampleGrad trilinear_sample_grad(const Volume& v, const Vec3& p) {
    if (!finite(p)) throw std::invalid_argument("non-finite sample coordinate");
    const auto sx = detail::axis_sample(p[0], v.dims[0]);
    const auto sy = detail::axis_sample(p[1], v.dims[1]);
    const auto sz = detail::axis_sample(p[2], v.dims[2]);

    const double fx = sx.frac, fy = sy.frac, fz = sz.frac;
    const double c000 = v.at(sx.i0, sy.i0, sz.i0), c100 = v.at(sx.i1, sy.i0, sz.i0);
    const double c010 = v.at(sx.i0, sy.i1, sz.i0), c110 = v.at(sx.i1, sy.i1, sz.i0);
    const double c001 = v.at(sx.i0, sy.i0, sz.i1), c101 = v.at(sx.i1, sy.i0, sz.i1);
    const double c011 = v.at(sx.i0, sy.i1, sz.i1), c111 = v.at(sx.i1, sy.i1, sz.i1);

    const double c00 = c000 + fx * (c100 - c000);
    const double c10 = c010 + fx * (c110 - c010);
    const double c01 = c001 + fx * (c101 - c001);
    const double c11 = c011 + fx * (c111 - c011);
    const double c0 = c00 + fy * (c10 - c00);
    const double c1 = c01 + fy * (c11 - c01);

    SampleGrad out;
    out.value = c0 + fz * (c1 - c0);

    const double gx00 = c100 - c000, gx10 = c110 - c010, gx01 = c101 - c001, gx11 = c111 - c011;
    const double gx0 = gx00 + fy * (gx10 - gx00);
    const double gx1 = gx01 + fy * (gx11 - gx01);
    out.grad[0] = sx.clamped ? 0.0 : gx0 + fz * (gx1 - gx0);
    const double gy0 = c10 - c00, gy1 = c11 - c01;
    out.grad[1] = sy.clamped ? 0.0 : gy0 + fz * (gy1 - gy0);
    out.grad[2] = sz.clamped ? 0.0 : c1 - c0;
    return out;
}

inline double trilinear_sample(const Volume& v, const Vec3& p) {
    return trilinear_sample_grad(v, p).value;
}

/// Shrink a volume by a factor in (0,1]; output voxel q samples the source
/// at q/factor. Output dims are round-half-up of dims*factor.
inline Volume downsample_volume(const Volume& v, double factor) {
    if (!(factor > 0.0) || factor > 1.0)
        throw std::invalid_argument("downsample factor must be in (0,1]");
    if (factor == 1.0) return v;
    Dims3 out_dims;
    for (int a = 0; a < 3; ++a) {
        out_dims[a] = static_cast<int>(std::floor(v.dims[a] * factor + 0.5));
        if (out_dims[a] < 2) throw std::invalid_argument("pyramid too deep for volume");
    }
    Vec3 sp{v.spacing[0] / factor, v.spacing[1] / factor, v.spacing[2] / factor};
    Volume out(out_dims, 0.0, sp);
    const double inv = 1.0 / factor;
    std::size_t i = 0;
    for (int z = 0; z < out_dims[2]; ++z)
        for (int y = 0; y < out_dims[1]; ++y)
            for (int x = 0; x < out_dims[0]; ++x, ++i)
                out.data[i] = trilinear_sample(v, Vec3{x * inv, y * inv, z * inv});
    return out;
}

}  // namespace warpfield

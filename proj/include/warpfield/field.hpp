#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "warpfield/landmarks.hpp"
#include "warpfield/vec3.hpp"
#include "warpfield/volume.hpp"

namespace warpfield {

/// Dense grid of per-voxel displacement 3-vectors, in voxel units of its own
/// grid. The all-zero field is the identity transform.
struct DisplacementField {
    Dims3 dims{0, 0, 0};
    std::vector<Vec3> vectors;

    DisplacementField() = default;
    explicit DisplacementField(Dims3 d) : dims(d), vectors(Volume::checked_size(d), Vec3{0.0, 0.0, 0.0}) {}

    std::size_t size() const { return vectors.size(); }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(dims[0]) * (y + static_cast<std::size_t>(dims[1]) * z);
    }
    Vec3& at(int x, int y, int z) { return vectors[index(x, y, z)]; }
    const Vec3& at(int x, int y, int z) const { return vectors[index(x, y, z)]; }

    double max_abs_component() const {
        double m = 0.0;
        for (const auto& v : vectors)
            for (double c : v) m = std::max(m, std::abs(c));
        return m;
    }
};

/// Componentwise trilinear interpolation of the field at a continuous point,
/// with the same border clamp as volume sampling.
inline Vec3 sample_field(const DisplacementField& f, const Vec3& p) {
    if (!finite(p)) throw std::invalid_argument("non-finite sample coordinate");
    const auto sx = detail::axis_sample(p[0], f.dims[0]);
    const auto sy = detail::axis_sample(p[1], f.dims[1]);
    const auto sz = detail::axis_sample(p[2], f.dims[2]);
    Vec3 out{0.0, 0.0, 0.0};
    for (int c = 0; c < 3; ++c) {
        const double c000 = f.at(sx.i0, sy.i0, sz.i0)[c], c100 = f.at(sx.i1, sy.i0, sz.i0)[c];
        const double c010 = f.at(sx.i0, sy.i1, sz.i0)[c], c110 = f.at(sx.i1, sy.i1, sz.i0)[c];
        const double c001 = f.at(sx.i0, sy.i0, sz.i1)[c], c101 = f.at(sx.i1, sy.i0, sz.i1)[c];
        const double c011 = f.at(sx.i0, sy.i1, sz.i1)[c], c111 = f.at(sx.i1, sy.i1, sz.i1)[c];
        const double c00 = c000 + sx.frac * (c100 - c000);
        const double c10 = c010 + sx.frac * (c110 - c010);
        const double c01 = c001 + sx.frac * (c101 - c001);
        const double c11 = c011 + sx.frac * (c111 - c011);
        const double c0 = c00 + sy.frac * (c10 - c00);
        const double c1 = c01 + sy.frac * (c11 - c01);
        out[c] = c0 + sz.frac * (c1 - c0);
    }
    return out;
}

/// The 8 lattice corners and weights used when interpolating at p; exposed so
/// objective gradients can scatter through the same weights.
struct InterpStencil {
    std::array<std::size_t, 8> index;
    std::array<double, 8> weight;
};

inline InterpStencil interp_stencil(const DisplacementField& f, const Vec3& p) {
    const auto sx = detail::axis_sample(p[0], f.dims[0]);
    const auto sy = detail::axis_sample(p[1], f.dims[1]);
    const auto sz = detail::axis_sample(p[2], f.dims[2]);
    const double fx = sx.frac, fy = sy.frac, fz = sz.frac;
    InterpStencil s;
    int k = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++k) {
                s.index[k] = f.index(dx ? sx.i1 : sx.i0, dy ? sy.i1 : sy.i0, dz ? sz.i1 : sz.i0);
                s.weight[k] = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
            }
    return s;
}

/// output(p) = v(p + f(p)); the pull-back warp used throughout.
inline Volume warp_volume(const Volume& v, const DisplacementField& f) {
    if (!same_dims(v.dims, f.dims)) throw std::invalid_argument("volume/field dimension mismatch");
    Volume out(v.dims, 0.0, v.spacing);
    std::size_t i = 0;
    for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[0]; ++x, ++i) {
                const Vec3& d = f.vectors[i];
                out.data[i] = trilinear_sample(v, Vec3{x + d[0], y + d[1], z + d[2]});
            }
    return out;
}

/// Push fixed-grid landmarks through the field: p -> p + f(p).
inline LandmarkSet warp_landmarks(const DisplacementField& f, const LandmarkSet& fixed) {
    LandmarkSet out;
    out.points.reserve(fixed.size());
    for (const auto& lm : fixed.points)
        out.points.push_back({lm.id, lm.coord + sample_field(f, lm.coord)});
    return out;
}

/// Resample a field onto a grid `scale` times finer: out(q) = scale * f(q/scale).
/// Vectors are multiplied by `scale` because displacements are stored in voxel
/// units of their own grid.
inline DisplacementField resample_field(const DisplacementField& f, Dims3 target_dims, double scale) {
    DisplacementField out(target_dims);
    const double inv = 1.0 / scale;
    std::size_t i = 0;
    for (int z = 0; z < target_dims[2]; ++z)
        for (int y = 0; y < target_dims[1]; ++y)
            for (int x = 0; x < target_dims[0]; ++x, ++i)
                out.vectors[i] = scale * sample_field(f, Vec3{x * inv, y * inv, z * inv});
    return out;
}

inline DisplacementField upsample_field(const DisplacementField& f) {
    return resample_field(f, Dims3{2 * f.dims[0], 2 * f.dims[1], 2 * f.dims[2]}, 2.0);
}

/// Voxel-wise vector sum; the promotion step adds a per-level increment to
/// the upsampled coarse field rather than composing transforms functionally.
inline DisplacementField compose_add(const DisplacementField& coarse_upsampled, const DisplacementField& increment) {
    if (!same_dims(coarse_upsampled.dims, increment.dims))
        throw std::invalid_argument("field dimension mismatch");
    DisplacementField out = coarse_upsampled;
    for (std::size_t i = 0; i < out.size(); ++i) out.vectors[i] = out.vectors[i] + increment.vectors[i];
    return out;
}

namespace detail {

// d f_c / d axis at one voxel: central differences in the interior,
// one-sided on the faces.
inline double fd_derivative(const DisplacementField& f, int x, int y, int z, int c, int axis) {
    const int n = f.dims[axis];
    int pos[3] = {x, y, z};
    const int i = pos[axis];
    if (i > 0 && i < n - 1) {
        int hi[3] = {x, y, z}, lo[3] = {x, y, z};
        ++hi[axis];
        --lo[axis];
        return 0.5 * (f.at(hi[0], hi[1], hi[2])[c] - f.at(lo[0], lo[1], lo[2])[c]);
    }
    if (i == 0) {
        int hi[3] = {x, y, z};
        ++hi[axis];
        return f.at(hi[0], hi[1], hi[2])[c] - f.at(x, y, z)[c];
    }
    int lo[3] = {x, y, z};
    --lo[axis];
    return f.at(x, y, z)[c] - f.at(lo[0], lo[1], lo[2])[c];
}

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 deformation_jacobian(const DisplacementField& f, int x, int y, int z) {
    Mat3 m;
    for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 3; ++d)
            m[c][d] = (c == d ? 1.0 : 0.0) + fd_derivative(f, x, y, z, c, d);
    return m;
}

inline double det3(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
         - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
         + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// cof[c][d] = d det / d m[c][d]
inline Mat3 cofactor3(const Mat3& m) {
    Mat3 c;
    c[0][0] = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    c[0][1] = -(m[1][0] * m[2][2] - m[1][2] * m[2][0]);
    c[0][2] = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    c[1][0] = -(m[0][1] * m[2][2] - m[0][2] * m[2][1]);
    c[1][1] = m[0][0] * m[2][2] - m[0][2] * m[2][0];
    c[1][2] = -(m[0][0] * m[2][1] - m[0][1] * m[2][0]);
    c[2][0] = m[0][1] * m[1][2] - m[0][2] * m[1][1];
    c[2][1] = -(m[0][0] * m[1][2] - m[0][2] * m[1][0]);
    c[2][2] = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    return c;
}

}  // namespace detail

/// Per-voxel det(I + grad f). Positive everywhere means the deformation is
/// locally invertible and fold-free.
inline Volume jacobian_determinant(const DisplacementField& f) {
    if (f.dims[0] < 2 || f.dims[1] < 2 || f.dims[2] < 2)
        throw std::invalid_argument("jacobian needs dims >= 2 per axis");
    Volume out(f.dims);
    std::size_t i = 0;
    for (int z = 0; z < f.dims[2]; ++z)
        for (int y = 0; y < f.dims[1]; ++y)
            for (int x = 0; x < f.dims[0]; ++x, ++i)
                out.data[i] = detail::det3(detail::deformation_jacobian(f, x, y, z));
    return out;
}

}  // namespace warpfield

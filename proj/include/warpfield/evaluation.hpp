#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "warpfield/field.hpp"
#include "warpfield/landmarks.hpp"

namespace warpfield {

/// Mean Euclidean distance between corresponding landmarks (target
/// registration error).
inline double mae(const LandmarkSet& a, const LandmarkSet& b) {
    require_paired(a, b);
    if (a.empty()) throw std::invalid_argument("mae of empty landmark sets");
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += norm(a.points[k].coord - b.points[k].coord);
    return acc / static_cast<double>(a.size());
}

/// Fraction of landmarks whose error strictly decreased.
inline double robustness(const std::vector<double>& before, const std::vector<double>& after) {
    if (before.empty() || before.size() != after.size())
        throw std::invalid_argument("robustness needs equal-length non-empty error lists");
    std::size_t improved = 0;
    for (std::size_t k = 0; k < before.size(); ++k)
        if (after[k] < before[k]) ++improved;
    return static_cast<double>(improved) / static_cast<double>(before.size());
}

/// Number of voxels where the deformation is not locally invertible
/// (Jacobian determinant <= 0).
inline long long njd_count(const DisplacementField& f) {
    long long count = 0;
    for (int z = 0; z < f.dims[2]; ++z)
        for (int y = 0; y < f.dims[1]; ++y)
            for (int x = 0; x < f.dims[0]; ++x)
                if (detail::det3(detail::deformation_jacobian(f, x, y, z)) <= 0.0) ++count;
    return count;
}

struct PerLandmarkError {
    std::int64_t id = 0;
    double before = 0.0;
    double after = 0.0;
};

struct EvaluationReport {
    double mae = 0.0;         // after registration (== before when no field given)
    double mae_before = 0.0;
    double robustness = 0.0;
    std::string units = "voxels";
    bool has_njd = false;
    long long njd = 0;
    std::vector<PerLandmarkError> per_landmark;
};

/// Landmark-based registration quality. `field` may be null (no registration:
/// after == before, so robustness is 0). `spacing` switches distances to mm.
inline EvaluationReport evaluate_registration(const LandmarkSet& fixed, const LandmarkSet& moving,
                                              const DisplacementField* field,
                                              const Vec3* spacing = nullptr) {
    require_paired(fixed, moving);
    if (fixed.empty()) throw std::invalid_argument("evaluation needs at least one landmark");
    EvaluationReport rep;
    rep.units = spacing ? "mm" : "voxels";
    std::vector<double> before(fixed.size()), after(fixed.size());
    for (std::size_t k = 0; k < fixed.size(); ++k) {
        const Vec3& p = fixed.points[k].coord;
        const Vec3& m = moving.points[k].coord;
        Vec3 q = field ? p + sample_field(*field, p) : p;
        Vec3 db = p - m, da = q - m;
        if (spacing) {
            for (int c = 0; c < 3; ++c) {
                db[c] *= (*spacing)[c];
                da[c] *= (*spacing)[c];
            }
        }
        before[k] = norm(db);
        after[k] = norm(da);
        rep.per_landmark.push_back({fixed.points[k].id, before[k], after[k]});
        rep.mae_before += before[k];
        rep.mae += after[k];
    }
    rep.mae_before /= static_cast<double>(fixed.size());
    rep.mae /= static_cast<double>(fixed.size());
    rep.robustness = robustness(before, after);
    if (field) {
        rep.has_njd = true;
        rep.njd = njd_count(*field);
    }
    return rep;
}

}  // namespace warpfield

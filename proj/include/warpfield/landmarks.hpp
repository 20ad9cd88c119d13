#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "warpfield/vec3.hpp"

namespace warpfield {

/// One labelled point in continuous voxel coordinates of an associated grid.
struct Landmark {
    std::int64_t id = 0;
    Vec3 coord{0.0, 0.0, 0.0};
};

/// Ordered list of landmarks. Two sets are paired iff they carry the same
/// ids in the same order.
struct LandmarkSet {
    std::vector<Landmark> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    bool has_unique_ids() const {
        for (std::size_t i = 0; i < points.size(); ++i)
            for (std::size_t j = i + 1; j < points.size(); ++j)
                if (points[i].id == points[j].id) return false;
        return true;
    }
};

inline bool paired(const LandmarkSet& a, const LandmarkSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.points[i].id != b.points[i].id) return false;
    return true;
}

inline void require_paired(const LandmarkSet& a, const LandmarkSet& b) {
    if (!paired(a, b)) throw std::invalid_argument("landmark sets are not paired");
}

/// Scale coordinates into a grid downsampled by `factor`; ids preserved.
inline LandmarkSet downsample_landmarks(const LandmarkSet& l, double factor) {
    LandmarkSet out;
    out.points.reserve(l.size());
    for (const auto& lm : l.points) out.points.push_back({lm.id, factor * lm.coord});
    return out;
}

}  // namespace warpfield

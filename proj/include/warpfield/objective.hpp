#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "warpfield/field.hpp"
#include "warpfield/landmarks.hpp"
#include "warpfield/volume.hpp"

namespace warpfield {

enum class Mode { pretrain, train, finetune };

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::pretrain: return "pretrain";
        case Mode::train: return "train";
        case Mode::finetune: return "finetune";
    }
    return "?";
}

/// Loss-term weights and shape of the multi-level objective.
///  - pretrain: similarity + plain smoothness (mu ignored, lambda treated as 0)
///  - train:    similarity + mu * landmark distance + sigma * regularizer
///  - finetune: similarity + sigma * regularizer (mu ignored)
struct ObjectiveConfig {
    double sigma = 1.0;   // weight of the regularization loss
    double mu = 0.01;     // weight of the landmark distance loss
    double lambda = 1e-4; // weight of the folding penalty inside the regularizer
    int window = 3;       // local NCC window edge length, odd
    Mode mode = Mode::finetune;
    int level_count = 4;

    void validate() const {
        if (window < 3 || window % 2 == 0) throw std::invalid_argument("window must be odd and >= 3");
        if (level_count < 1 || level_count > 16) throw std::invalid_argument("level_count must be in [1,16]");
        if (!(sigma >= 0.0) || !(mu >= 0.0) || !(lambda >= 0.0))
            throw std::invalid_argument("loss weights must be non-negative");
    }

    double effective_mu() const { return mode == Mode::train ? mu : 0.0; }
    double effective_lambda() const { return mode == Mode::pretrain ? 0.0 : lambda; }
    double effective_sigma() const { return mode == Mode::pretrain ? 1.0 : sigma; }
};

/// Level weights: similarity and regularization terms are halved per step
/// away from the finest level, the landmark term is doubled.
inline double similarity_level_weight(int level, int level_count) {
    return 1.0 / static_cast<double>(1LL << (level_count - level));
}
inline double landmark_level_weight(int level, int level_count) {
    return static_cast<double>(1LL << (level_count - level));
}

// Windows whose intensity variance falls below this sum-of-squares floor
// score 0 and propagate no gradient.
inline constexpr double kNccVarianceFloor = 1e-9;

namespace detail {

// Sliding window sum with radius r along one axis, truncated at the borders.
inline void box_sum_axis(std::vector<double>& data, const Dims3& dims, int axis, int r,
                         std::vector<double>& prefix) {
    const int n = dims[axis];
    const std::size_t strides[3] = {1, static_cast<std::size_t>(dims[0]),
                                    static_cast<std::size_t>(dims[0]) * dims[1]};
    const std::size_t stride = strides[axis];
    const int u_axis = axis == 0 ? 1 : 0;
    const int v_axis = axis == 2 ? 1 : 2;
    prefix.resize(static_cast<std::size_t>(n) + 1);
    for (int vv = 0; vv < dims[v_axis]; ++vv) {
        for (int uu = 0; uu < dims[u_axis]; ++uu) {
            const std::size_t base = strides[u_axis] * uu + strides[v_axis] * vv;
            prefix[0] = 0.0;
            for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + data[base + stride * i];
            for (int i = 0; i < n; ++i) {
                const int lo = std::max(i - r, 0);
                const int hi = std::min(i + r + 1, n);
                data[base + stride * i] = prefix[hi] - prefix[lo];
            }
        }
    }
}

inline void box_sum(std::vector<double>& data, const Dims3& dims, int r) {
    std::vector<double> prefix;
    for (int axis = 0; axis < 3; ++axis) box_sum_axis(data, dims, axis, r, prefix);
}

// Truncated window voxel count at position i along an axis of length n.
inline double window_count(int i, int n, int r) {
    return static_cast<double>(std::min(i + r, n - 1) - std::max(i - r, 0) + 1);
}

// Mean windowed NCC of (a, b); optionally also d(mean NCC)/d a(q) as a volume.
inline double local_ncc_impl(const Volume& a, const Volume& b, int w, Volume* grad_wrt_a) {
    if (!same_dims(a.dims, b.dims)) throw std::invalid_argument("local_ncc dimension mismatch");
    if (w < 1 || w % 2 == 0) throw std::invalid_argument("window must be odd");
    const int r = w / 2;
    const Dims3 dims = a.dims;
    const std::size_t n = a.size();

    std::vector<double> sa = a.data, sb = b.data, saa(n), sbb(n), sab(n);
    for (std::size_t i = 0; i < n; ++i) {
        saa[i] = a.data[i] * a.data[i];
        sbb[i] = b.data[i] * b.data[i];
        sab[i] = a.data[i] * b.data[i];
    }
    box_sum(sa, dims, r);
    box_sum(sb, dims, r);
    box_sum(saa, dims, r);
    box_sum(sbb, dims, r);
    box_sum(sab, dims, r);

    std::vector<double> alpha, beta, alpha_bbar, beta_abar;
    if (grad_wrt_a) {
        alpha.assign(n, 0.0);
        beta.assign(n, 0.0);
        alpha_bbar.assign(n, 0.0);
        beta_abar.assign(n, 0.0);
    }

    double acc = 0.0;
    std::size_t i = 0;
    for (int z = 0; z < dims[2]; ++z) {
        const double cz = window_count(z, dims[2], r);
        for (int y = 0; y < dims[1]; ++y) {
            const double cyz = cz * window_count(y, dims[1], r);
            for (int x = 0; x < dims[0]; ++x, ++i) {
                const double cnt = cyz * window_count(x, dims[0], r);
                const double inv_cnt = 1.0 / cnt;
                const double abar = sa[i] * inv_cnt;
                const double bbar = sb[i] * inv_cnt;
                const double va = saa[i] - sa[i] * abar;
                const double vb = sbb[i] - sb[i] * bbar;
                if (va <= kNccVarianceFloor || vb <= kNccVarianceFloor) continue;
                const double cross = sab[i] - sa[i] * bbar;
                const double s = std::sqrt(va * vb);
                double c = cross / s;
                if (c > 1.0) {
                    acc += 1.0;
                    continue;  // clamped: flat, no gradient
                }
                if (c < -1.0) {
                    acc += -1.0;
                    continue;
                }
                acc += c;
                if (grad_wrt_a) {
                    const double al = 1.0 / s;
                    const double be = c / va;
                    alpha[i] = al;
                    beta[i] = be;
                    alpha_bbar[i] = al * bbar;
                    beta_abar[i] = be * abar;
                }
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    if (grad_wrt_a) {
        box_sum(alpha, dims, r);
        box_sum(beta, dims, r);
        box_sum(alpha_bbar, dims, r);
        box_sum(beta_abar, dims, r);
        *grad_wrt_a = Volume(dims);
        for (std::size_t q = 0; q < n; ++q)
            grad_wrt_a->data[q] =
                inv_n * (b.data[q] * alpha[q] - alpha_bbar[q] - a.data[q] * beta[q] + beta_abar[q]);
    }
    return acc * inv_n;
}

}  // namespace detail

/// Mean over voxels of windowed NCC with a w^3 neighborhood (border-truncated
/// windows). Result lies in [-1, 1].
inline double local_ncc(const Volume& a, const Volume& b, int w) {
    return detail::local_ncc_impl(a, b, w, nullptr);
}

struct WarpedFixedPair {
    const Volume* warped = nullptr;
    const Volume* fixed = nullptr;
};

/// Deep self-supervised similarity: minus the level-weighted sum of local NCC
/// between each level's warped and fixed image.
inline double self_loss(const std::vector<WarpedFixedPair>& levels, int window) {
    if (levels.empty()) throw std::invalid_argument("missing level");
    const int level_count = static_cast<int>(levels.size());
    double loss = 0.0;
    for (int i = 1; i <= level_count; ++i) {
        const auto& pair = levels[i - 1];
        if (!pair.warped || !pair.fixed) throw std::invalid_argument("missing level");
        loss -= similarity_level_weight(i, level_count) * local_ncc(*pair.warped, *pair.fixed, window);
    }
    return loss;
}

/// Mean squared Euclidean distance between pushed fixed landmarks and moving
/// landmarks. Empty paired sets contribute 0.
inline double landmark_mse(const DisplacementField& f, const LandmarkSet& fixed, const LandmarkSet& moving) {
    require_paired(fixed, moving);
    if (fixed.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < fixed.size(); ++k) {
        const Vec3& p = fixed.points[k].coord;
        const Vec3 pushed = p + sample_field(f, p);
        acc += norm2(pushed - moving.points[k].coord);
    }
    return acc / static_cast<double>(fixed.size());
}

/// Deep weakly-supervised landmark loss: level-weighted sum of landmark MSE,
/// with weights doubling toward the coarse levels.
inline double weak_loss(const std::vector<const DisplacementField*>& fields,
                        const std::vector<const LandmarkSet*>& fixed_lms,
                        const std::vector<const LandmarkSet*>& moving_lms) {
    if (fields.empty() || fields.size() != fixed_lms.size() || fields.size() != moving_lms.size())
        throw std::invalid_argument("missing level");
    const int level_count = static_cast<int>(fields.size());
    double loss = 0.0;
    for (int i = 1; i <= level_count; ++i) {
        if (!fields[i - 1] || !fixed_lms[i - 1] || !moving_lms[i - 1])
            throw std::invalid_argument("missing level");
        loss += landmark_level_weight(i, level_count) *
                landmark_mse(*fields[i - 1], *fixed_lms[i - 1], *moving_lms[i - 1]);
    }
    return loss;
}

/// Sum over voxels of squared forward-difference gradients of all three
/// field components (zero at the far boundary).
inline double l2_grad_reg(const DisplacementField& f) {
    double acc = 0.0;
    const Dims3 d = f.dims;
    const std::size_t sx = 1, sy = static_cast<std::size_t>(d[0]),
                      sz = static_cast<std::size_t>(d[0]) * d[1];
    std::size_t i = 0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x, ++i) {
                const Vec3& v = f.vectors[i];
                for (int c = 0; c < 3; ++c) {
                    if (x + 1 < d[0]) { const double g = f.vectors[i + sx][c] - v[c]; acc += g * g; }
                    if (y + 1 < d[1]) { const double g = f.vectors[i + sy][c] - v[c]; acc += g * g; }
                    if (z + 1 < d[2]) { const double g = f.vectors[i + sz][c] - v[c]; acc += g * g; }
                }
            }
    return acc;
}

/// Folding penalty: sum over voxels of max(0, -det(I + grad f)).
inline double njd_penalty(const DisplacementField& f) {
    double acc = 0.0;
    for (int z = 0; z < f.dims[2]; ++z)
        for (int y = 0; y < f.dims[1]; ++y)
            for (int x = 0; x < f.dims[0]; ++x) {
                const double det = detail::det3(detail::deformation_jacobian(f, x, y, z));
                if (det < 0.0) acc -= det;
            }
    return acc;
}

/// Level-weighted regularizer: smoothness plus lambda-scaled folding penalty.
inline double reg_loss(const std::vector<const DisplacementField*>& fields, double lambda) {
    if (fields.empty()) throw std::invalid_argument("missing level");
    const int level_count = static_cast<int>(fields.size());
    double loss = 0.0;
    for (int i = 1; i <= level_count; ++i) {
        if (!fields[i - 1]) throw std::invalid_argument("missing level");
        loss += similarity_level_weight(i, level_count) *
                (lambda * njd_penalty(*fields[i - 1]) + l2_grad_reg(*fields[i - 1]));
    }
    return loss;
}

/// One pyramid level of the registration state. Landmark pointers may be
/// null outside train mode.
struct PyramidLevel {
    const Volume* fixed = nullptr;
    const Volume* moving = nullptr;
    const DisplacementField* field = nullptr;
    const LandmarkSet* fixed_landmarks = nullptr;
    const LandmarkSet* moving_landmarks = nullptr;
};

/// Coarse-to-fine state; levels[0] is level 1 (coarsest). May hold only the
/// prefix of levels built so far.
struct PyramidState {
    std::vector<PyramidLevel> levels;
};

/// One level's loss terms. The *_term fields carry the level weight; total is
/// the mode-weighted contribution of this level to the objective.
struct LevelLoss {
    int level = 0;
    double ncc = 0.0;        // raw mean windowed NCC
    double mse = 0.0;        // raw landmark MSE
    double ncc_term = 0.0;   // -w_i * ncc
    double weak_term = 0.0;  // u_i * mse
    double l2_term = 0.0;    // w_i * l2_grad_reg
    double jd_term = 0.0;    // w_i * njd_penalty
    double total = 0.0;
};

struct TotalLoss {
    std::vector<LevelLoss> levels;
    double total = 0.0;
};

namespace detail {

inline void check_level(const PyramidLevel& lv, const ObjectiveConfig& cfg) {
    if (!lv.fixed || !lv.moving || !lv.field) throw std::invalid_argument("missing level");
    if (!same_dims(lv.fixed->dims, lv.moving->dims) || !same_dims(lv.fixed->dims, lv.field->dims))
        throw std::invalid_argument("level dimension mismatch");
    if (cfg.mode == Mode::train) {
        if (!lv.fixed_landmarks || !lv.moving_landmarks || lv.fixed_landmarks->empty())
            throw std::invalid_argument("weak supervision requires landmarks");
    }
}

}  // namespace detail

inline LevelLoss level_loss(const PyramidLevel& lv, int level, const ObjectiveConfig& cfg) {
    cfg.validate();
    detail::check_level(lv, cfg);
    const double w_sim = similarity_level_weight(level, cfg.level_count);
    const double w_lm = landmark_level_weight(level, cfg.level_count);

    LevelLoss out;
    out.level = level;
    const Volume warped = warp_volume(*lv.moving, *lv.field);
    out.ncc = local_ncc(warped, *lv.fixed, cfg.window);
    out.ncc_term = -w_sim * out.ncc;
    if (cfg.mode == Mode::train) {
        out.mse = landmark_mse(*lv.field, *lv.fixed_landmarks, *lv.moving_landmarks);
        out.weak_term = w_lm * out.mse;
    }
    out.l2_term = w_sim * l2_grad_reg(*lv.field);
    out.jd_term = w_sim * njd_penalty(*lv.field);
    out.total = out.ncc_term + cfg.effective_mu() * out.weak_term +
                cfg.effective_sigma() * (out.l2_term + cfg.effective_lambda() * out.jd_term);
    return out;
}

/// Mode-weighted multi-level objective over the levels present in the state.
inline TotalLoss total_loss(const PyramidState& state, const ObjectiveConfig& cfg) {
    cfg.validate();
    if (state.levels.empty() || static_cast<int>(state.levels.size()) > cfg.level_count)
        throw std::invalid_argument("state levels must be a non-empty prefix of level_count");
    TotalLoss out;
    for (std::size_t i = 0; i < state.levels.size(); ++i) {
        out.levels.push_back(level_loss(state.levels[i], static_cast<int>(i) + 1, cfg));
        out.total += out.levels.back().total;
    }
    return out;
}

namespace detail {

inline void add_l2_gradient(const DisplacementField& f, double weight, DisplacementField& g) {
    const Dims3 d = f.dims;
    const std::size_t sx = 1, sy = static_cast<std::size_t>(d[0]),
                      sz = static_cast<std::size_t>(d[0]) * d[1];
    std::size_t i = 0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x, ++i)
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    if (x + 1 < d[0]) acc -= f.vectors[i + sx][c] - f.vectors[i][c];
                    if (x > 0) acc += f.vectors[i][c] - f.vectors[i - sx][c];
                    if (y + 1 < d[1]) acc -= f.vectors[i + sy][c] - f.vectors[i][c];
                    if (y > 0) acc += f.vectors[i][c] - f.vectors[i - sy][c];
                    if (z + 1 < d[2]) acc -= f.vectors[i + sz][c] - f.vectors[i][c];
                    if (z > 0) acc += f.vectors[i][c] - f.vectors[i - sz][c];
                    g.vectors[i][c] += 2.0 * weight * acc;
                }
}

// Scatter coeff * d(df_c/d axis)/d f into the finite-difference stencil at p.
inline void scatter_fd_stencil(DisplacementField& g, const Dims3& d, int x, int y, int z, int c,
                               int axis, double coeff) {
    const int n = d[axis];
    int pos[3] = {x, y, z};
    const int i = pos[axis];
    if (i > 0 && i < n - 1) {
        int hi[3] = {x, y, z}, lo[3] = {x, y, z};
        ++hi[axis];
        --lo[axis];
        g.at(hi[0], hi[1], hi[2])[c] += 0.5 * coeff;
        g.at(lo[0], lo[1], lo[2])[c] -= 0.5 * coeff;
    } else if (i == 0) {
        int hi[3] = {x, y, z};
        ++hi[axis];
        g.at(hi[0], hi[1], hi[2])[c] += coeff;
        g.at(x, y, z)[c] -= coeff;
    } else {
        int lo[3] = {x, y, z};
        --lo[axis];
        g.at(x, y, z)[c] += coeff;
        g.at(lo[0], lo[1], lo[2])[c] -= coeff;
    }
}

// Hinge subgradient of the folding penalty; zero at det = 0.
inline void add_njd_gradient(const DisplacementField& f, double weight, DisplacementField& g) {
    for (int z = 0; z < f.dims[2]; ++z)
        for (int y = 0; y < f.dims[1]; ++y)
            for (int x = 0; x < f.dims[0]; ++x) {
                const Mat3 m = deformation_jacobian(f, x, y, z);
                if (det3(m) >= 0.0) continue;
                const Mat3 cof = cofactor3(m);
                for (int c = 0; c < 3; ++c)
                    for (int d = 0; d < 3; ++d)
                        scatter_fd_stencil(g, f.dims, x, y, z, c, d, -weight * cof[c][d]);
            }
}

}  // namespace detail

/// Analytic gradient of total_loss with respect to the field at `level`
/// (1-based). Only that level's terms depend on it, so the result is the
/// gradient of the full objective.
inline DisplacementField loss_gradient(const PyramidState& state, const ObjectiveConfig& cfg, int level) {
    cfg.validate();
    if (level < 1 || level > static_cast<int>(state.levels.size()))
        throw std::invalid_argument("invalid level");
    const PyramidLevel& lv = state.levels[level - 1];
    detail::check_level(lv, cfg);

    const double w_sim = similarity_level_weight(level, cfg.level_count);
    const double w_lm = landmark_level_weight(level, cfg.level_count);
    const double reg_w = cfg.effective_sigma() * w_sim;
    const DisplacementField& f = *lv.field;
    DisplacementField g(f.dims);

    // similarity: chain rule through the warp's trilinear sampling
    {
        const Volume& moving = *lv.moving;
        Volume warped(f.dims);
        std::vector<Vec3> sample_grads(f.size());
        std::size_t i = 0;
        for (int z = 0; z < f.dims[2]; ++z)
            for (int y = 0; y < f.dims[1]; ++y)
                for (int x = 0; x < f.dims[0]; ++x, ++i) {
                    const Vec3& d = f.vectors[i];
                    const SampleGrad s = trilinear_sample_grad(moving, Vec3{x + d[0], y + d[1], z + d[2]});
                    warped.data[i] = s.value;
                    sample_grads[i] = s.grad;
                }
        Volume ncc_grad;
        detail::local_ncc_impl(warped, *lv.fixed, cfg.window, &ncc_grad);
        for (std::size_t q = 0; q < f.size(); ++q) {
            const double coeff = -w_sim * ncc_grad.data[q];
            g.vectors[q][0] += coeff * sample_grads[q][0];
            g.vectors[q][1] += coeff * sample_grads[q][1];
            g.vectors[q][2] += coeff * sample_grads[q][2];
        }
    }

    // landmark distance: residuals scattered through the interpolation weights
    if (cfg.effective_mu() > 0.0 && lv.fixed_landmarks && !lv.fixed_landmarks->empty()) {
        const LandmarkSet& lf = *lv.fixed_landmarks;
        const LandmarkSet& lm = *lv.moving_landmarks;
        require_paired(lf, lm);
        const double coeff = cfg.effective_mu() * w_lm * 2.0 / static_cast<double>(lf.size());
        for (std::size_t k = 0; k < lf.size(); ++k) {
            const Vec3& p = lf.points[k].coord;
            const Vec3 r = p + sample_field(f, p) - lm.points[k].coord;
            const InterpStencil st = interp_stencil(f, p);
            for (int j = 0; j < 8; ++j)
                for (int c = 0; c < 3; ++c)
                    g.vectors[st.index[j]][c] += coeff * r[c] * st.weight[j];
        }
    }

    if (reg_w > 0.0) {
        detail::add_l2_gradient(f, reg_w, g);
        if (cfg.effective_lambda() > 0.0)
            detail::add_njd_gradient(f, reg_w * cfg.effective_lambda(), g);
    }
    return g;
}

}  // namespace warpfield

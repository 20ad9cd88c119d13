#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "warpfield/evaluation.hpp"
#include "warpfield/field.hpp"
#include "warpfield/landmarks.hpp"
#include "warpfield/objective.hpp"
#include "warpfield/rng.hpp"
#include "warpfield/volume.hpp"

namespace warpfield {

enum class Optimizer { gradient_descent, adaptive_moment };

struct EngineConfig {
    ObjectiveConfig objective;
    int iters_per_level = 120;
    double step_size = 0.4;  // max voxel change per accepted step
    Optimizer optimizer = Optimizer::gradient_descent;
    std::uint64_t seed = 0;
    int finetune_iters = 20;
    double finetune_step = 0.02;

    void validate() const {
        objective.validate();
        if (iters_per_level < 1) throw std::invalid_argument("iters_per_level must be >= 1");
        if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be positive");
        if (finetune_iters < 0) throw std::invalid_argument("finetune_iters must be non-negative");
        if (!(finetune_step > 0.0)) throw std::invalid_argument("finetune_step must be positive");
    }
};

struct LevelTrace {
    int level = 0;
    Dims3 dims{0, 0, 0};
    double ncc_promoted = 0.0;  // level NCC under the promoted field, before refinement
    double ncc_final = 0.0;
    double loss_initial = 0.0;
    double loss_final = 0.0;
    int accepted = 0;
    int rejected = 0;
};

struct RegistrationReport {
    Mode mode = Mode::finetune;
    std::vector<LevelTrace> levels;
    double final_loss = 0.0;       // objective over all levels at exit
    double self_loss_final = 0.0;  // similarity part alone
    long long njd = 0;
    bool has_landmarks = false;
    double mae_before = 0.0;
    double mae_after = 0.0;
};

struct RegistrationResult {
    DisplacementField final_field;
    std::vector<DisplacementField> per_level_fields;  // [i] is level i+1
    Volume warped;
    RegistrationReport report;
};

namespace detail {

struct LevelData {
    Volume fixed, moving;
    LandmarkSet fixed_lms, moving_lms;
    DisplacementField field;
};

inline PyramidLevel level_view(const LevelData& d, bool with_landmarks) {
    PyramidLevel lv;
    lv.fixed = &d.fixed;
    lv.moving = &d.moving;
    lv.field = &d.field;
    if (with_landmarks) {
        lv.fixed_landmarks = &d.fixed_lms;
        lv.moving_landmarks = &d.moving_lms;
    }
    return lv;
}

struct OptStats {
    double loss_initial = 0.0, loss_final = 0.0;
    int accepted = 0, rejected = 0;
};

inline constexpr double kGradFloor = 1e-12;
inline constexpr double kStepFloor = 1e-8;

// Refine one level's field in place; earlier levels stay frozen and only
// enter through the (constant) deep-supervision terms, so the active level's
// own loss is the full descent target.
inline OptStats optimize_level(std::vector<LevelData>& levels, int level, const ObjectiveConfig& ocfg,
                               Optimizer opt, int iters, double step0) {
    LevelData& ld = levels[level - 1];
    const bool with_lms = ocfg.mode == Mode::train;
    const auto make_state = [&] {
        PyramidState st;
        for (int j = 0; j < level; ++j) st.levels.push_back(level_view(levels[j], with_lms));
        return st;
    };
    const auto current_loss = [&](const DisplacementField& f) {
        PyramidLevel lv = level_view(ld, with_lms);
        lv.field = &f;
        return level_loss(lv, level, ocfg).total;
    };

    OptStats stats;
    double cur = current_loss(ld.field);
    stats.loss_initial = cur;
    double step = step0;

    if (opt == Optimizer::gradient_descent) {
        for (int it = 0; it < iters; ++it) {
            const DisplacementField g = loss_gradient(make_state(), ocfg, level);
            const double gmax = g.max_abs_component();
            if (gmax < kGradFloor) break;
            const double scale = step / gmax;
            DisplacementField cand = ld.field;
            for (std::size_t q = 0; q < cand.size(); ++q)
                for (int c = 0; c < 3; ++c) cand.vectors[q][c] -= scale * g.vectors[q][c];
            const double cl = current_loss(cand);
            if (cl < cur) {
                ld.field = std::move(cand);
                cur = cl;
                ++stats.accepted;
            } else {
                step *= 0.5;
                ++stats.rejected;
                if (step < kStepFloor) break;
            }
        }
    } else {
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const DisplacementField entry = ld.field;
        std::vector<Vec3> m(ld.field.size(), Vec3{0, 0, 0}), v(ld.field.size(), Vec3{0, 0, 0});
        double b1t = 1.0, b2t = 1.0;
        for (int it = 0; it < iters; ++it) {
            const DisplacementField g = loss_gradient(make_state(), ocfg, level);
            if (g.max_abs_component() < kGradFloor) break;
            b1t *= b1;
            b2t *= b2;
            for (std::size_t q = 0; q < ld.field.size(); ++q)
                for (int c = 0; c < 3; ++c) {
                    m[q][c] = b1 * m[q][c] + (1.0 - b1) * g.vectors[q][c];
                    v[q][c] = b2 * v[q][c] + (1.0 - b2) * g.vectors[q][c] * g.vectors[q][c];
                    const double mh = m[q][c] / (1.0 - b1t);
                    const double vh = v[q][c] / (1.0 - b2t);
                    ld.field.vectors[q][c] -= step * mh / (std::sqrt(vh) + eps);
                }
            ++stats.accepted;
        }
        double end = current_loss(ld.field);
        if (end > cur) {  // keep the no-worse-on-exit guarantee of the default path
            ld.field = entry;
            end = cur;
            stats.rejected = stats.accepted;
            stats.accepted = 0;
        }
        cur = end;
    }
    stats.loss_final = cur;
    return stats;
}

inline std::vector<LevelData> build_pyramid(const Volume& fixed, const Volume& moving,
                                            const LandmarkSet* fixed_lms, const LandmarkSet* moving_lms,
                                            int level_count) {
    std::vector<LevelData> levels(level_count);
    for (int i = 1; i <= level_count; ++i) {
        const double factor = std::ldexp(1.0, i - level_count);
        LevelData& ld = levels[i - 1];
        ld.fixed = downsample_volume(fixed, factor);
        ld.moving = downsample_volume(moving, factor);
        if (fixed_lms && moving_lms) {
            ld.fixed_lms = downsample_landmarks(*fixed_lms, factor);
            ld.moving_lms = downsample_landmarks(*moving_lms, factor);
        }
    }
    return levels;
}

inline void finalize_result(std::vector<LevelData>& levels, const Volume& moving,
                            const LandmarkSet* fixed_lms, const LandmarkSet* moving_lms,
                            const ObjectiveConfig& ocfg, RegistrationResult& out) {
    const int level_count = static_cast<int>(levels.size());
    out.per_level_fields.clear();
    for (auto& ld : levels) out.per_level_fields.push_back(ld.field);
    out.final_field = levels[level_count - 1].field;
    out.warped = warp_volume(moving, out.final_field);

    PyramidState st;
    const bool with_lms = ocfg.mode == Mode::train;
    for (auto& ld : levels) st.levels.push_back(level_view(ld, with_lms));
    const TotalLoss tl = total_loss(st, ocfg);
    out.report.final_loss = tl.total;
    out.report.self_loss_final = 0.0;
    for (const auto& ll : tl.levels) out.report.self_loss_final += ll.ncc_term;
    out.report.njd = njd_count(out.final_field);
    if (fixed_lms && moving_lms && !fixed_lms->empty()) {
        out.report.has_landmarks = true;
        out.report.mae_before = mae(*fixed_lms, *moving_lms);
        out.report.mae_after = mae(warp_landmarks(out.final_field, *fixed_lms), *moving_lms);
    }
}

}  // namespace detail

/// Coarse-to-fine registration of `moving` onto `fixed`. Landmarks are
/// required in train mode and otherwise optional (used for reporting only).
/// Deterministic given config and seed.
inline RegistrationResult register_pair(const Volume& fixed, const Volume& moving,
                                        const LandmarkSet* fixed_lms, const LandmarkSet* moving_lms,
                                        const EngineConfig& cfg) {
    cfg.validate();
    if (!same_dims(fixed.dims, moving.dims)) throw std::invalid_argument("fixed/moving dimension mismatch");
    const ObjectiveConfig& ocfg = cfg.objective;
    if (ocfg.mode == Mode::train && (!fixed_lms || !moving_lms || fixed_lms->empty()))
        throw std::invalid_argument("weak supervision requires landmarks");
    if (fixed_lms && moving_lms) require_paired(*fixed_lms, *moving_lms);

    auto levels = detail::build_pyramid(fixed, moving, fixed_lms, moving_lms, ocfg.level_count);
    std::mt19937_64 rng(cfg.seed ^ 0x6a09e667f3bcc908ULL);

    RegistrationResult out;
    out.report.mode = ocfg.mode;
    for (int i = 1; i <= ocfg.level_count; ++i) {
        detail::LevelData& ld = levels[i - 1];
        if (i == 1)
            ld.field = DisplacementField(ld.fixed.dims);
        else
            ld.field = resample_field(levels[i - 2].field, ld.fixed.dims, 2.0);

        LevelTrace tr;
        tr.level = i;
        tr.dims = ld.fixed.dims;
        tr.ncc_promoted = local_ncc(warp_volume(ld.moving, ld.field), ld.fixed, ocfg.window);
        // the seed perturbs each level's initial step so separately seeded
        // runs explore distinct trajectories
        const double step = cfg.step_size * (0.9 + 0.2 * uniform01(rng));
        const auto stats =
            detail::optimize_level(levels, i, ocfg, cfg.optimizer, cfg.iters_per_level, step);
        tr.ncc_final = local_ncc(warp_volume(ld.moving, ld.field), ld.fixed, ocfg.window);
        tr.loss_initial = stats.loss_initial;
        tr.loss_final = stats.loss_final;
        tr.accepted = stats.accepted;
        tr.rejected = stats.rejected;
        out.report.levels.push_back(tr);
    }
    detail::finalize_result(levels, moving, fixed_lms, moving_lms, ocfg, out);
    return out;
}

/// Pair-specific refinement: continue optimizing every level of a prior
/// result under the similarity + regularizer objective (no landmark term).
/// Never exits with a higher objective than it entered with.
inline RegistrationResult finetune(const RegistrationResult& prior, const Volume& fixed,
                                   const Volume& moving, const EngineConfig& cfg) {
    cfg.validate();
    if (cfg.finetune_iters == 0) return prior;
    ObjectiveConfig ocfg = cfg.objective;
    ocfg.mode = Mode::finetune;
    if (static_cast<int>(prior.per_level_fields.size()) != ocfg.level_count)
        throw std::invalid_argument("prior result level count mismatch");
    if (!same_dims(fixed.dims, moving.dims)) throw std::invalid_argument("fixed/moving dimension mismatch");

    auto levels = detail::build_pyramid(fixed, moving, nullptr, nullptr, ocfg.level_count);
    for (int i = 0; i < ocfg.level_count; ++i) {
        if (!same_dims(prior.per_level_fields[i].dims, levels[i].fixed.dims))
            throw std::invalid_argument("prior fields do not match pyramid dims");
        levels[i].field = prior.per_level_fields[i];
    }

    std::mt19937_64 rng(cfg.seed ^ 0xbb67ae8584caa73bULL);
    RegistrationResult out;
    out.report.mode = Mode::finetune;
    for (int i = 1; i <= ocfg.level_count; ++i) {
        detail::LevelData& ld = levels[i - 1];
        LevelTrace tr;
        tr.level = i;
        tr.dims = ld.fixed.dims;
        tr.ncc_promoted = local_ncc(warp_volume(ld.moving, ld.field), ld.fixed, ocfg.window);
        const double step = cfg.finetune_step * (0.9 + 0.2 * uniform01(rng));
        const auto stats =
            detail::optimize_level(levels, i, ocfg, cfg.optimizer, cfg.finetune_iters, step);
        tr.ncc_final = local_ncc(warp_volume(ld.moving, ld.field), ld.fixed, ocfg.window);
        tr.loss_initial = stats.loss_initial;
        tr.loss_final = stats.loss_final;
        tr.accepted = stats.accepted;
        tr.rejected = stats.rejected;
        out.report.levels.push_back(tr);
    }
    detail::finalize_result(levels, moving, nullptr, nullptr, ocfg, out);
    return out;
}

/// Voxel-wise weighted average of displacement fields. Weights default to
/// uniform and must sum to 1. Identical inputs are returned unchanged so
/// unit-sum roundoff cannot perturb them.
inline DisplacementField ensemble(const std::vector<DisplacementField>& fields,
                                  const std::vector<double>& weights_in = {}) {
    if (fields.empty()) throw std::invalid_argument("ensemble needs at least one field");
    for (const auto& f : fields)
        if (!same_dims(f.dims, fields[0].dims)) throw std::invalid_argument("ensemble dimension mismatch");
    std::vector<double> weights = weights_in;
    if (weights.empty()) weights.assign(fields.size(), 1.0 / static_cast<double>(fields.size()));
    if (weights.size() != fields.size()) throw std::invalid_argument("ensemble weights size mismatch");
    double sum = 0.0;
    for (double w : weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("ensemble weights must sum to 1");

    bool identical = true;
    for (std::size_t j = 1; j < fields.size() && identical; ++j)
        identical = fields[j].vectors == fields[0].vectors;
    if (identical) return fields[0];

    DisplacementField out(fields[0].dims);
    for (std::size_t q = 0; q < out.size(); ++q)
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < fields.size(); ++j) acc += weights[j] * fields[j].vectors[q][c];
            out.vectors[q][c] = acc;
        }
    return out;
}

}  // namespace warpfield

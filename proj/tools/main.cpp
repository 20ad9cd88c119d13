// warpfield command-line driver: register / synth / evaluate / warp /
// ensemble / jacobian over the header+raw grid formats.

#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "warpfield/warpfield.hpp"

namespace {

using namespace warpfield;

// the preprocessing crop for the tumor-registration challenge layout:
// x 48:192, y 32:224, z -5:155 of a 240x240x155 scan -> 144x192x160
constexpr CropRegion kBratsCrop{{48, 32, -5}, {192, 224, 155}};

struct RegisterArgs {
    std::string fixed, moving, fixed_lms, moving_lms;
    std::string out_field, out_warped, out_report, config;
    std::string mode, preprocess;
    long long seed = -1;  // -1: take the config file's seed
    bool run_finetune = false;
};

LandmarkSet shift_landmarks(const LandmarkSet& in, const Dims3& offset) {
    LandmarkSet out = in;
    for (auto& lm : out.points)
        for (int c = 0; c < 3; ++c) lm.coord[c] -= offset[c];
    return out;
}

int cmd_register(const RegisterArgs& a) {
    // argument problems exit 2 before any data is touched
    if (a.fixed_lms.empty() != a.moving_lms.empty()) {
        std::fprintf(stderr, "error: --fixed-landmarks and --moving-landmarks must be given together\n");
        return 2;
    }
    EngineConfig cfg;
    if (!a.config.empty()) cfg = read_engine_config(a.config);
    if (!a.mode.empty()) {
        if (a.mode == "pretrain")
            cfg.objective.mode = Mode::pretrain;
        else if (a.mode == "train")
            cfg.objective.mode = Mode::train;
        else if (a.mode == "finetune")
            cfg.objective.mode = Mode::finetune;
        else {
            std::fprintf(stderr, "error: --mode must be one of pretrain|train|finetune\n");
            return 2;
        }
    }
    if (cfg.objective.mode == Mode::train && a.fixed_lms.empty()) {
        std::fprintf(stderr, "error: --mode train requires --fixed-landmarks and --moving-landmarks\n");
        return 2;
    }
    if (!a.preprocess.empty() && a.preprocess != "brats") {
        std::fprintf(stderr, "error: --preprocess must be 'brats' when given\n");
        return 2;
    }
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);

    Volume fixed = read_volume(a.fixed);
    Volume moving = read_volume(a.moving);
    LandmarkSet flm, mlm;
    const bool has_lms = !a.fixed_lms.empty();
    if (has_lms) {
        flm = read_landmarks(a.fixed_lms);
        mlm = read_landmarks(a.moving_lms);
    }
    if (a.preprocess == "brats") {
        fixed = minmax_normalize(crop_pad(fixed, kBratsCrop));
        moving = minmax_normalize(crop_pad(moving, kBratsCrop));
        if (has_lms) {
            flm = shift_landmarks(flm, kBratsCrop.start);
            mlm = shift_landmarks(mlm, kBratsCrop.start);
        }
    }

    RegistrationResult res = register_pair(fixed, moving, has_lms ? &flm : nullptr,
                                           has_lms ? &mlm : nullptr, cfg);
    if (a.run_finetune) {
        res = finetune(res, fixed, moving, cfg);
        if (has_lms) {
            res.report.has_landmarks = true;
            res.report.mae_before = mae(flm, mlm);
            res.report.mae_after = mae(warp_landmarks(res.final_field, flm), mlm);
        }
    }

    if (!a.out_field.empty()) write_field(a.out_field, res.final_field, fixed.spacing);
    if (!a.out_warped.empty()) write_volume(a.out_warped, res.warped);
    if (!a.out_report.empty()) {
        std::string rep = report_text(res.report);
        if (has_lms) {
            const EvaluationReport ev = evaluate_registration(flm, mlm, &res.final_field);
            rep += "robustness=" + fmt_g(ev.robustness) + "\n";
            rep += "units=" + ev.units + "\n";
        }
        detail::write_text_file(a.out_report, rep);
    }
    std::printf("registered: mode=%s njd=%lld final_loss=%s\n", to_string(cfg.objective.mode).c_str(),
                res.report.njd, fmt_g(res.report.final_loss).c_str());
    if (res.report.has_landmarks)
        std::printf("mae: %s -> %s\n", fmt_g(res.report.mae_before).c_str(),
                    fmt_g(res.report.mae_after).c_str());
    return 0;
}

int cmd_synth(const std::vector<int>& dims, double max_disp, int landmarks, long long seed,
              const std::string& prefix) {
    SynthConfig sc;
    sc.dims = {dims[0], dims[1], dims[2]};
    sc.max_disp = max_disp;
    sc.landmark_count = landmarks;
    sc.seed = static_cast<std::uint64_t>(seed);
    const SynthPair sp = make_synth_pair(sc);
    write_volume(prefix + "_moving.vvh", sp.moving);
    write_volume(prefix + "_fixed.vvh", sp.fixed);
    write_field(prefix + "_true_field.vvh", sp.true_field);
    write_landmarks(prefix + "_fixed_landmarks.csv", sp.fixed_landmarks);
    write_landmarks(prefix + "_moving_landmarks.csv", sp.moving_landmarks);
    std::printf("synth pair written to %s_* (pre-registration mae %s)\n", prefix.c_str(),
                fmt_g(sp.pre_mae).c_str());
    return 0;
}

int cmd_evaluate(const std::string& fixed_lms, const std::string& moving_lms,
                 const std::string& field_path, const std::vector<double>& spacing,
                 const std::string& out) {
    const LandmarkSet flm = read_landmarks(fixed_lms);
    const LandmarkSet mlm = read_landmarks(moving_lms);
    DisplacementField field;
    const bool has_field = !field_path.empty();
    if (has_field) field = read_field(field_path);
    Vec3 sp{1.0, 1.0, 1.0};
    const bool has_spacing = !spacing.empty();
    if (has_spacing) sp = {spacing[0], spacing[1], spacing[2]};
    const EvaluationReport ev =
        evaluate_registration(flm, mlm, has_field ? &field : nullptr, has_spacing ? &sp : nullptr);

    std::string rep;
    rep += "mae=" + fmt_g(ev.mae) + "\n";
    rep += "mae_before=" + fmt_g(ev.mae_before) + "\n";
    rep += "robustness=" + fmt_g(ev.robustness) + "\n";
    rep += "units=" + ev.units + "\n";
    if (ev.has_njd) rep += "njd=" + std::to_string(ev.njd) + "\n";
    for (const auto& pl : ev.per_landmark)
        rep += "landmark" + std::to_string(pl.id) + "=" + fmt_g(pl.before) + " " + fmt_g(pl.after) + "\n";
    if (!out.empty()) detail::write_text_file(out, rep);
    std::fputs(rep.c_str(), stdout);
    return 0;
}

int cmd_warp(const std::string& volume, const std::string& field, const std::string& out) {
    const Volume v = read_volume(volume);
    const DisplacementField f = read_field(field);
    write_volume(out, warp_volume(v, f));
    std::printf("warped volume written to %s\n", out.c_str());
    return 0;
}

std::vector<double> parse_weights(const std::string& s) {
    std::vector<double> w;
    std::string cur;
    std::istringstream iss(s);
    while (std::getline(iss, cur, ',')) w.push_back(detail::parse_real(detail::trim(cur), "weight"));
    return w;
}

int cmd_ensemble(const std::vector<std::string>& field_paths, const std::string& weights_csv,
                 const std::string& out) {
    std::vector<DisplacementField> fields;
    for (const auto& p : field_paths) fields.push_back(read_field(p));
    std::vector<double> weights;
    if (!weights_csv.empty()) weights = parse_weights(weights_csv);
    write_field(out, ensemble(fields, weights));
    std::printf("ensemble of %zu fields written to %s\n", fields.size(), out.c_str());
    return 0;
}

int cmd_jacobian(const std::string& field, const std::string& out) {
    const DisplacementField f = read_field(field);
    write_volume(out, jacobian_determinant(f));
    std::printf("jacobian determinant volume written to %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coarse-to-fine deformable registration of 3D volumes"};
    app.require_subcommand(1);

    RegisterArgs ra;
    auto* reg = app.add_subcommand("register", "register a moving volume onto a fixed volume");
    reg->add_option("--fixed", ra.fixed, "fixed volume header")->required();
    reg->add_option("--moving", ra.moving, "moving volume header")->required();
    reg->add_option("--fixed-landmarks", ra.fixed_lms, "fixed landmark csv");
    reg->add_option("--moving-landmarks", ra.moving_lms, "moving landmark csv");
    reg->add_option("--mode", ra.mode, "pretrain|train|finetune (default finetune)");
    reg->add_option("--out-field", ra.out_field, "output displacement field header");
    reg->add_option("--out-warped", ra.out_warped, "output warped volume header");
    reg->add_option("--out-report", ra.out_report, "output key=value report");
    reg->add_option("--config", ra.config, "engine config file");
    reg->add_option("--seed", ra.seed, "seed (overrides config file)");
    reg->add_option("--preprocess", ra.preprocess, "preprocessing preset (brats)");
    reg->add_flag("--finetune", ra.run_finetune, "run the pair-specific refinement pass after registration");

    std::vector<int> sy_dims{36, 48, 40};
    double sy_maxdisp = 5.0;
    int sy_lms = 20;
    long long sy_seed = 0;
    std::string sy_prefix;
    auto* sy = app.add_subcommand("synth", "generate a synthetic pair with known ground truth");
    sy->add_option("--dims", sy_dims, "grid dims")->expected(3);
    sy->add_option("--max-disp", sy_maxdisp, "max displacement magnitude, voxels");
    sy->add_option("--landmarks", sy_lms, "landmark count");
    sy->add_option("--seed", sy_seed, "seed");
    sy->add_option("--out-prefix", sy_prefix, "output path prefix")->required();

    std::string ev_flm, ev_mlm, ev_field, ev_out;
    std::vector<double> ev_spacing;
    auto* ev = app.add_subcommand("evaluate", "landmark-based registration metrics");
    ev->add_option("--fixed-landmarks", ev_flm)->required();
    ev->add_option("--moving-landmarks", ev_mlm)->required();
    ev->add_option("--field", ev_field, "displacement field to evaluate");
    ev->add_option("--spacing", ev_spacing, "voxel spacing in mm")->expected(3);
    ev->add_option("--out", ev_out, "write the report here too");

    std::string w_vol, w_field, w_out;
    auto* wp = app.add_subcommand("warp", "apply a displacement field to a volume");
    wp->add_option("--volume", w_vol)->required();
    wp->add_option("--field", w_field)->required();
    wp->add_option("--out", w_out)->required();

    std::vector<std::string> en_fields;
    std::string en_weights, en_out;
    auto* en = app.add_subcommand("ensemble", "weighted average of displacement fields");
    en->add_option("--field", en_fields, "field header (repeatable)")->required();
    en->add_option("--weights", en_weights, "comma-separated weights, e.g. 0.3,0.7");
    en->add_option("--out", en_out)->required();

    std::string j_field, j_out;
    auto* jc = app.add_subcommand("jacobian", "jacobian determinant volume of a field");
    jc->add_option("--field", j_field)->required();
    jc->add_option("--out", j_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        if (reg->parsed()) return cmd_register(ra);
        if (sy->parsed()) return cmd_synth(sy_dims, sy_maxdisp, sy_lms, sy_seed, sy_prefix);
        if (ev->parsed()) return cmd_evaluate(ev_flm, ev_mlm, ev_field, ev_spacing, ev_out);
        if (wp->parsed()) return cmd_warp(w_vol, w_field, w_out);
        if (en->parsed()) return cmd_ensemble(en_fields, en_weights, en_out);
        if (jc->parsed()) return cmd_jacobian(j_field, j_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "warpfield/warpfield.hpp"

using namespace warpfield;

namespace {

// owning 4-level state for objective tests; dims need not form a strict pyramid
struct FourLevels {
    std::vector<Volume> fixed, moving;
    std::vector<DisplacementField> fields;
    std::vector<LandmarkSet> lf, lm;

    PyramidState state(bool with_lms) const {
        PyramidState st;
        for (int i = 0; i < 4; ++i) {
            PyramidLevel lv;
            lv.fixed = &fixed[i];
            lv.moving = &moving[i];
            lv.field = &fields[i];
            if (with_lms) {
                lv.fixed_landmarks = &lf[i];
                lv.moving_landmarks = &lm[i];
            }
            st.levels.push_back(lv);
        }
        return st;
    }
};

FourLevels identical_levels(std::mt19937_64& g) {
    FourLevels s;
    const Dims3 dims[4] = {{4, 4, 4}, {6, 6, 6}, {8, 8, 8}, {10, 10, 10}};
    for (int i = 0; i < 4; ++i) {
        Volume v = testutil::noise_volume(dims[i], g);
        s.fixed.push_back(v);
        s.moving.push_back(v);
        s.fields.emplace_back(dims[i]);
        s.lf.push_back(testutil::random_landmarks(dims[i], g, 4));
        s.lm.push_back(s.lf.back());
    }
    return s;
}

}  // namespace

TEST_CASE("local NCC of a volume with itself is 1") {
    std::mt19937_64 g(51);
    const Volume a = testutil::noise_volume({7, 6, 5}, g);
    CHECK(local_ncc(a, a, 3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("local NCC is invariant to positive affine intensity maps") {
    std::mt19937_64 g(52);
    const Volume a = testutil::noise_volume({6, 6, 6}, g);
    Volume b = a;
    for (auto& v : b.data) v = 2.0 * v + 3.0;
    CHECK(local_ncc(a, b, 3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("local NCC of a volume with its negation is -1") {
    std::mt19937_64 g(53);
    const Volume a = testutil::noise_volume({6, 5, 7}, g);
    Volume b = a;
    for (auto& v : b.data) v = -v;
    CHECK(local_ncc(a, b, 3) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("windows below the variance floor score zero") {
    std::mt19937_64 g(54);
    const Volume a = testutil::noise_volume({5, 5, 5}, g);
    const Volume flat(a.dims, 0.42);
    CHECK(local_ncc(a, flat, 3) == 0.0);
    Volume grad;
    detail::local_ncc_impl(a, flat, 3, &grad);
    for (double v : grad.data) CHECK(v == 0.0);
}

TEST_CASE("border windows are truncated, not padded") {
    Volume a({3, 1, 1}), b({3, 1, 1});
    a.data = {0.0, 1.0, 2.0};
    b.data = {0.0, 1.0, 0.0};
    // per-window correlations are +1, 0, -1; their mean is 0
    CHECK(local_ncc(a, b, 3) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("local NCC validates its inputs") {
    Volume a({4, 4, 4}, 0.0), b({4, 4, 3}, 0.0);
    CHECK_THROWS_AS(local_ncc(a, b, 3), std::invalid_argument);
    CHECK_THROWS_AS(local_ncc(a, a, 4), std::invalid_argument);
}

TEST_CASE("level weights halve (similarity) and double (landmarks) toward coarse") {
    CHECK(similarity_level_weight(4, 4) == 1.0);
    CHECK(similarity_level_weight(3, 4) == 0.5);
    CHECK(similarity_level_weight(2, 4) == 0.25);
    CHECK(similarity_level_weight(1, 4) == 0.125);
    CHECK(landmark_level_weight(4, 4) == 1.0);
    CHECK(landmark_level_weight(1, 4) == 8.0);
}

TEST_CASE("self loss of perfectly aligned levels is -1.875") {
    std::mt19937_64 g(55);
    std::vector<Volume> vols;
    for (int i = 0; i < 4; ++i) vols.push_back(testutil::noise_volume({6, 6, 6}, g));
    std::vector<WarpedFixedPair> pairs;
    for (int i = 0; i < 4; ++i) pairs.push_back({&vols[i], &vols[i]});
    CHECK(self_loss(pairs, 3) == doctest::Approx(-1.875).epsilon(1e-12));
}

TEST_CASE("self loss weighs the finest level with 1") {
    std::mt19937_64 g(56);
    std::vector<Volume> noise, flat;
    for (int i = 0; i < 4; ++i) {
        noise.push_back(testutil::noise_volume({6, 6, 6}, g));
        flat.emplace_back(Dims3{6, 6, 6}, 0.5);
    }
    // zero correlation on levels 1-3 (floored flat windows), perf
    // correlation on level 4
    std::vector<WarpedFixedPair> pairs = {{&noise[0], &flat[0]},
                                          {&noise[1], &flat[1]},
                                          {&noise[2], &flat[2]},
                                          {&noise[3], &noise[3]}};
    CHECK(self_loss(pairs, 3) == doctest::Approx(-1.0).epsilon(1e-12));
    std::vector<WarpedFixedPair> all_flat = {{&noise[0], &flat[0]},
                                             {&noise[1], &flat[1]},
                                             {&noise[2], &flat[2]},
                                             {&noise[3], &flat[3]}};
    CHECK(self_loss(all_flat, 3) == 0.0);
    CHECK_THROWS_WITH_AS(self_loss({}, 3), doctest::Contains("missing level"), std::invalid_argument);
}

TEST_CASE("landmark MSE is the mean squared pushed-to-target distance") {
    DisplacementField zero({10, 10, 10});
    LandmarkSet f, m;
    f.points.push_back({0, {5.0, 5.0, 5.0}});
    m.points.push_back({0, {8.0, 9.0, 5.0}});
    CHECK(landmark_mse(zero, f, m) == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(landmark_mse(zero, f, f) == 0.0);

    DisplacementField shift({10, 10, 10});
    for (auto& v : shift.vectors) v = Vec3{1.0, 2.0, 0.0};
    CHECK(landmark_mse(shift, f, m) == doctest::Approx(8.0).epsilon(1e-12));

    LandmarkSet other;
    other.points.push_back({3, {1.0, 1.0, 1.0}});
    CHECK_THROWS_AS(landmark_mse(zero, f, other), std::invalid_argument);
    CHECK(landmark_mse(zero, LandmarkSet{}, LandmarkSet{}) == 0.0);
}

TEST_CASE("weak loss weighs coarse levels more") {
    std::vector<DisplacementField> fields(4, DisplacementField({10, 10, 10}));
    LandmarkSet p, q;
    p.points.push_back({0, {5.0, 5.0, 5.0}});
    q.points.push_back({0, {8.0, 9.0, 5.0}});

    std::vector<const DisplacementField*> fp;
    for (auto& f : fields) fp.push_back(&f);

    std::vector<const LandmarkSet*> aligned = {&p, &p, &p, &p};
    CHECK(weak_loss(fp, aligned, aligned) == 0.0);

    std::vector<const LandmarkSet*> off4 = {&p, &p, &p, &q};
    CHECK(weak_loss(fp, aligned, off4) == doctest::Approx(25.0).epsilon(1e-12));

    std::vector<const LandmarkSet*> off1 = {&q, &p, &p, &p};
    CHECK(weak_loss(fp, aligned, off1) == doctest::Approx(200.0).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(weak_loss({}, {}, {}), doctest::Contains("missing level"),
                         std::invalid_argument);
}

TEST_CASE("smoothness term sums squared forward differences") {
    CHECK(l2_grad_reg(DisplacementField({5, 5, 5})) == 0.0);

    DisplacementField constant({5, 5, 5});
    for (auto& v : constant.vectors) v = Vec3{2.0, -1.0, 0.5};
    CHECK(l2_grad_reg(constant) == 0.0);

    const int n = 4;
    DisplacementField linear({n, n, n});
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) linear.at(x, y, z)[0] = static_cast<double>(x);
    CHECK(l2_grad_reg(linear) == static_cast<double>((n - 1) * n * n));
}

TEST_CASE("folding penalty is a hinge on the negative determinant") {
    CHECK(njd_penalty(DisplacementField({6, 6, 6})) == 0.0);
    // smooth small-gradient fields stay fold-free
    CHECK(njd_penalty(make_synth_field({12, 12, 12}, 2.0, 9)) == 0.0);
    // two folded slabs of a 10x6x6 grid: 2 * 6 * 6 voxels at det = -1
    CHECK(njd_penalty(testutil::localized_fold({10, 6, 6})) == doctest::Approx(72.0).epsilon(1e-12));
    CHECK(njd_penalty(testutil::global_fold({10, 10, 10})) == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("regularizer composes smoothness and folding with level weights") {
    std::vector<DisplacementField> zeros(4, DisplacementField({4, 4, 4}));
    std::vector<const DisplacementField*> zp;
    for (auto& f : zeros) zp.push_back(&f);
    CHECK(reg_loss(zp, 1e-4) == 0.0);

    std::mt19937_64 g(57);
    std::vector<DisplacementField> fields;
    for (int i = 0; i < 4; ++i) fields.push_back(testutil::smooth_random_field({5, 5, 5}, g, 0.8));
    std::vector<const DisplacementField*> fp;
    for (auto& f : fields) fp.push_back(&f);
    double manual = 0.0;
    for (int i = 1; i <= 4; ++i)
        manual += similarity_level_weight(i, 4) * l2_grad_reg(fields[i - 1]);
    CHECK(reg_loss(fp, 0.0) == doctest::Approx(manual).epsilon(1e-12));

    // isolate the folding part: a field with penalty 1000 on the finest level
    // adds lambda * 1000 * weight_4 on top of its smoothness
    std::vector<DisplacementField> mix(3, DisplacementField({4, 4, 4}));
    mix.push_back(testutil::global_fold({10, 10, 10}));
    std::vector<const DisplacementField*> mp;
    for (auto& f : mix) mp.push_back(&f);
    CHECK(reg_loss(mp, 1e-4) - reg_loss(mp, 0.0) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("objective config validates and applies mode switches") {
    ObjectiveConfig def;
    CHECK(def.sigma == 1.0);
    CHECK(def.mu == 0.01);
    CHECK(def.lambda == 1e-4);
    CHECK(def.window == 3);
    CHECK(def.level_count == 4);
    CHECK_NOTHROW(def.validate());

    ObjectiveConfig bad = def;
    bad.window = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = def;
    bad.window = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = def;
    bad.level_count = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = def;
    bad.level_count = 17;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = def;
    bad.sigma = -0.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    ObjectiveConfig m = def;
    m.mode = Mode::pretrain;
    CHECK(m.effective_mu() == 0.0);
    CHECK(m.effective_lambda() == 0.0);
    CHECK(m.effective_sigma() == 1.0);
    m.mode = Mode::train;
    CHECK(m.effective_mu() == 0.01);
    CHECK(m.effective_lambda() == 1e-4);
    m.mode = Mode::finetune;
    CHECK(m.effective_mu() == 0.0);
}

TEST_CASE("total loss of identical aligned levels is the pure similarity floor") {
    std::mt19937_64 g(58);
    const FourLevels s = identical_levels(g);
    ObjectiveConfig cfg;
    cfg.mode = Mode::finetune;
    const TotalLoss tl = total_loss(s.state(false), cfg);
    CHECK(tl.total == doctest::Approx(-1.875).epsilon(1e-9));
    REQUIRE(tl.levels.size() == 4);
    for (const auto& ll : tl.levels) {
        CHECK(ll.l2_term == 0.0);
        CHECK(ll.jd_term == 0.0);
        CHECK(ll.ncc == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("train and finetune totals differ by the weighted landmark loss") {
    std::mt19937_64 g(59);
    FourLevels s = identical_levels(g);
    for (int i = 0; i < 4; ++i) s.lm[i] = testutil::jittered(s.lf[i], g, 1.0);

    ObjectiveConfig cfg;
    cfg.mode = Mode::train;
    const double train = total_loss(s.state(true), cfg).total;
    cfg.mode = Mode::finetune;
    const double fine = total_loss(s.state(true), cfg).total;

    std::vector<const DisplacementField*> fp;
    std::vector<const LandmarkSet*> lfp, lmp;
    for (int i = 0; i < 4; ++i) {
        fp.push_back(&s.fields[i]);
        lfp.push_back(&s.lf[i]);
        lmp.push_back(&s.lm[i]);
    }
    const double weak = weak_loss(fp, lfp, lmp);
    CHECK(weak > 0.0);
    CHECK(train - fine == doctest::Approx(0.01 * weak).epsilon(1e-12));
}

TEST_CASE("total loss rejects malformed states") {
    std::mt19937_64 g(60);
    FourLevels s = identical_levels(g);
    ObjectiveConfig cfg;

    PyramidState st = s.state(false);
    CHECK_NOTHROW(total_loss(st, cfg));

    PyramidState empty;
    CHECK_THROWS_AS(total_loss(empty, cfg), std::invalid_argument);

    Volume odd({3, 3, 3}, 0.0);
    PyramidState bad = s.state(false);
    bad.levels[2].fixed = &odd;
    CHECK_THROWS_WITH_AS(total_loss(bad, cfg), doctest::Contains("dimension mismatch"),
                         std::invalid_argument);

    cfg.mode = Mode::train;
    CHECK_THROWS_WITH_AS(total_loss(s.state(false), cfg),
                         doctest::Contains("weak supervision requires landmarks"),
                         std::invalid_argument);
}

TEST_CASE("gradient vanishes at the aligned zero state") {
    std::mt19937_64 g(61);
    const Dims3 dc{5, 5, 5}, df{9, 9, 9};
    const Volume vc = testutil::noise_volume(dc, g), vf = testutil::noise_volume(df, g);
    const DisplacementField fc(dc), ff(df);
    PyramidLevel l1, l2;
    l1.fixed = &vc;
    l1.moving = &vc;
    l1.field = &fc;
    l2.fixed = &vf;
    l2.moving = &vf;
    l2.field = &ff;
    PyramidState st;
    st.levels = {l1, l2};
    ObjectiveConfig cfg;
    cfg.level_count = 2;
    for (int level = 1; level <= 2; ++level)
        CHECK(loss_gradient(st, cfg, level).max_abs_component() < 1e-8);
    CHECK_THROWS_AS(loss_gradient(st, cfg, 3), std::invalid_argument);
}

TEST_CASE("analytic gradient matches central finite differences in every mode") {
    std::mt19937_64 g(62);
    double worst = 0.0;
    for (Mode mode : {Mode::pretrain, Mode::train, Mode::finetune}) {
        for (int rep = 0; rep < 2; ++rep) {
            const auto inst = testutil::make_two_level_instance(g, mode);
            for (int level = 1; level <= 2; ++level) {
                const auto r = testutil::fd_check_level(inst, level, 25, g);
                worst = std::max(worst, r.worst_rel);
            }
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("smoothness gradient is the exact adjoint of the forward differences") {
    std::mt19937_64 g(63);
    DisplacementField f({5, 5, 5});
    for (auto& v : f.vectors)
        for (int c = 0; c < 3; ++c) v[c] = uniform(g, -2.0, 2.0);
    DisplacementField grad(f.dims);
    detail::add_l2_gradient(f, 1.0, grad);
    const double h = 1e-5;
    for (int k = 0; k < 40; ++k) {
        std::size_t q = static_cast<std::size_t>(uniform01(g) * f.size());
        if (q >= f.size()) q = f.size() - 1;
        const int c = k % 3;
        DisplacementField fp = f, fm = f;
        fp.vectors[q][c] += h;
        fm.vectors[q][c] -= h;
        const double fd = (l2_grad_reg(fp) - l2_grad_reg(fm)) / (2.0 * h);
        CHECK(grad.vectors[q][c] == doctest::Approx(fd).epsilon(1e-6));
    }

    // interior of a linear field is Laplacian-flat: adjoint must vanish there
    DisplacementField lin({6, 6, 6});
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) lin.at(x, y, z) = Vec3{0.3 * x, -0.1 * y, 0.2 * z};
    DisplacementField lg(lin.dims);
    detail::add_l2_gradient(lin, 1.0, lg);
    for (int z = 1; z < 5; ++z)
        for (int y = 1; y < 5; ++y)
            for (int x = 1; x < 5; ++x)
                for (int c = 0; c < 3; ++c) CHECK(std::abs(lg.at(x, y, z)[c]) < 1e-12);
}

#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "warpfield/warpfield.hpp"

using namespace warpfield;

namespace {

LandmarkSet points(std::initializer_list<Vec3> coords) {
    LandmarkSet s;
    std::int64_t id = 0;
    for (const auto& c : coords) s.points.push_back({id++, c});
    return s;
}

}  // namespace

TEST_CASE("mae of identical sets is zero") {
    const LandmarkSet a = points({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
    CHECK(mae(a, a) == 0.0);
}

TEST_CASE("mae of a single 3-4-0 offset is 5") {
    const LandmarkSet a = points({{0.0, 0.0, 0.0}});
    const LandmarkSet b = points({{3.0, 4.0, 0.0}});
    CHECK(mae(a, b) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("mae averages the per-landmark distances") {
    const LandmarkSet a = points({{0.0, 0.0, 0.0}, {10.0, 0.0, 0.0}});
    const LandmarkSet b = points({{2.0, 0.0, 0.0}, {10.0, 4.0, 0.0}});
    CHECK(mae(a, b) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("mae is symmetric and translation invariant") {
    std::mt19937_64 g(71);
    LandmarkSet a = testutil::random_landmarks({20, 20, 20}, g, 12);
    LandmarkSet b = testutil::jittered(a, g, 2.0);
    CHECK(mae(a, b) == doctest::Approx(mae(b, a)).epsilon(1e-12));
    LandmarkSet at = a, bt = b;
    const Vec3 t{3.25, -1.5, 0.75};
    for (auto& lm : at.points) lm.coord = lm.coord + t;
    for (auto& lm : bt.points) lm.coord = lm.coord + t;
    CHECK(mae(at, bt) == doctest::Approx(mae(a, b)).epsilon(1e-12));
}

TEST_CASE("mae rejects empty and unpaired sets") {
    CHECK_THROWS_AS(mae(LandmarkSet{}, LandmarkSet{}), std::invalid_argument);
    LandmarkSet a = points({{1.0, 1.0, 1.0}});
    LandmarkSet b = a;
    b.points[0].id = 9;
    CHECK_THROWS_AS(mae(a, b), std::invalid_argument);
}

TEST_CASE("robustness counts strictly improved landmarks") {
    CHECK(robustness({3.0, 5.0}, {1.0, 2.0}) == 1.0);
    CHECK(robustness({2.0, 4.0}, {1.0, 5.0}) == 0.5);
    CHECK(robustness({2.0, 4.0}, {2.0, 4.0}) == 0.0);  // ties are not improvements
    CHECK_THROWS_AS(robustness({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(robustness({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("robustness never increases when after-errors grow") {
    std::mt19937_64 g(72);
    std::vector<double> before, after;
    for (int k = 0; k < 10; ++k) {
        before.push_back(uniform(g, 1.0, 5.0));
        after.push_back(before.back() - uniform(g, -1.0, 1.0));
    }
    const double base = robustness(before, after);
    std::vector<double> worse = after;
    for (auto& v : worse) v += 0.5;
    CHECK(robustness(before, worse) <= base);
}

TEST_CASE("njd of the zero field is zero") {
    CHECK(njd_count(DisplacementField({8, 8, 8})) == 0);
}

TEST_CASE("njd counts non-positive determinant voxels of a fold") {
    // the fold slabs: det -1 at x in {4,5}, det 0 at x in {3,6}
    const Dims3 d{10, 6, 6};
    CHECK(njd_count(testutil::localized_fold(d)) == 4LL * d[1] * d[2]);
    CHECK(njd_count(testutil::global_fold({7, 7, 7})) == 343);
}

TEST_CASE("smooth synthetic fields are fold-free") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const DisplacementField f = make_synth_field({14, 12, 10}, 1.5, seed);
        CHECK(njd_count(f) == 0);
    }
}

TEST_CASE("averaging smooth fields does not create folds") {
    std::vector<DisplacementField> fields;
    for (std::uint64_t seed : {4, 5, 6})
        fields.push_back(make_synth_field({14, 12, 10}, 2.0, seed));
    long long worst = 0;
    for (const auto& f : fields) worst = std::max(worst, njd_count(f));
    const DisplacementField avg = ensemble(fields);
    CHECK(njd_count(avg) <= std::max(worst, 0LL));
    CHECK(njd_count(avg) == 0);
}

TEST_CASE("evaluate_registration reports before/after errors per landmark") {
    const LandmarkSet fixed = points({{2.0, 2.0, 2.0}, {5.0, 5.0, 5.0}});
    LandmarkSet moving = fixed;
    moving.points[0].coord = {5.0, 6.0, 2.0};  // offset (3,4,0): distance 5

    const EvaluationReport plain = evaluate_registration(fixed, moving, nullptr);
    CHECK(plain.mae == doctest::Approx(2.5));
    CHECK(plain.mae_before == doctest::Approx(2.5));
    CHECK(plain.robustness == 0.0);
    CHECK(plain.units == "voxels");
    CHECK_FALSE(plain.has_njd);

    DisplacementField field({8, 8, 8});
    for (auto& v : field.vectors) v = Vec3{1.5, 2.0, 0.0};  // halve the first error
    const EvaluationReport rep = evaluate_registration(fixed, moving, &field);
    CHECK(rep.mae_before == doctest::Approx(2.5));
    CHECK(rep.per_landmark.size() == 2);
    CHECK(rep.per_landmark[0].before == doctest::Approx(5.0));
    CHECK(rep.per_landmark[0].after == doctest::Approx(2.5));
    CHECK(rep.robustness == 0.5);
    CHECK(rep.has_njd);
    CHECK(rep.njd == 0);

    const Vec3 spacing{2.0, 2.0, 2.0};
    const EvaluationReport mm = evaluate_registration(fixed, moving, nullptr, &spacing);
    CHECK(mm.units == "mm");
    CHECK(mm.mae == doctest::Approx(5.0));

    CHECK_THROWS_AS(evaluate_registration(LandmarkSet{}, LandmarkSet{}, nullptr),
                    std::invalid_argument);
}

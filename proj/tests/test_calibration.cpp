#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "uncap/common.hpp"
#include "uncap/calibration.hpp"
#include "uncap/rng.hpp"

using namespace uncap;

namespace {

NonconformityModel model_with_scores(std::vector<double> scores,
                                     CdfMode mode = CdfMode::plain) {
    NonconformityModel m;
    m.scores = std::move(scores);
    std::sort(m.scores.begin(), m.scores.end());
    m.mode = mode;
    return m;
}

}  // namespace

TEST_CASE("fit_calibrator builds sorted 1-confidence scores") {
    std::vector<LabelledConfidence> set = {
        {{0.9, 0.1}, 0}, {{0.8, 0.2}, 0}, {{0.5, 0.5}, 0}, {{0.1, 0.9}, 0}};
    NonconformityModel m = fit_calibrator(set);
    REQUIRE(m.n() == 4);
    CHECK(m.scores[0] == doctest::Approx(0.1));
    CHECK(m.scores[1] == doctest::Approx(0.2));
    CHECK(m.scores[2] == doctest::Approx(0.5));
    CHECK(m.scores[3] == doctest::Approx(0.9));
}

TEST_CASE("fit_calibrator: single perfect sample; permutation invariance; errors") {
    NonconformityModel m = fit_calibrator({{{1.0, 0.0}, 0}});
    REQUIRE(m.n() == 1);
    CHECK(m.scores[0] == 0.0);

    std::vector<LabelledConfidence> set = {
        {{0.9, 0.1}, 0}, {{0.3, 0.7}, 1}, {{0.5, 0.5}, 0}, {{0.2, 0.8}, 1}};
    std::vector<LabelledConfidence> shuffled = {set[2], set[0], set[3], set[1]};
    CHECK(fit_calibrator(set).scores == fit_calibrator(shuffled).scores);

    CHECK_THROWS_AS(fit_calibrator({}), InvariantError);
    CHECK_THROWS_AS((fit_calibrator({{{0.5, 0.5}, 2}})), InvariantError);
}

TEST_CASE("singleton threshold is 1 minus the second-highest confidence") {
    CHECK(singleton_threshold({0.7, 0.2, 0.1}) == doctest::Approx(0.8));
    CHECK(singleton_threshold({1.0, 0.0}) == doctest::Approx(1.0));
    CHECK(singleton_threshold({0.25, 0.25, 0.25, 0.25}) == doctest::Approx(0.75));
    CHECK_THROWS_AS(singleton_threshold({1.0}), InvariantError);
}

TEST_CASE("empirical CDF: counting, bounds, right-continuity") {
    NonconformityModel m = model_with_scores({0.05, 0.2, 0.5, 0.9});
    CHECK(empirical_cdf(m, 0.55) == doctest::Approx(0.75));
    CHECK(empirical_cdf(m, 0.0) == 0.0);
    CHECK(empirical_cdf(m, 0.04) == 0.0);
    CHECK(empirical_cdf(m, 0.9) == 1.0);
    CHECK(empirical_cdf(m, 1.5) == 1.0);
    // Boundary convention: a score value is included (<=).
    CHECK(empirical_cdf(m, 0.5) == doctest::Approx(0.75));
    CHECK(empirical_cdf(m, 0.2) == doctest::Approx(0.5));
}

TEST_CASE("empirical CDF: corrected mode divides by n+1 and clips") {
    NonconformityModel m = model_with_scores({0.05, 0.2, 0.5, 0.9}, CdfMode::corrected);
    CHECK(empirical_cdf(m, 0.55) == doctest::Approx(3.0 / 5.0));
    CHECK(empirical_cdf(m, 1.5) == doctest::Approx(4.0 / 5.0));
    CHECK(empirical_cdf(m, 0.0) == 0.0);
}

TEST_CASE("calibrate composes the threshold with the CDF") {
    NonconformityModel m = model_with_scores({0.05, 0.2, 0.5, 0.9});
    Calibrated c = calibrate(m, {0.5, 0.45, 0.05});  // c* = 0.55
    CHECK(c.p_calibrated == doctest::Approx(0.75));
    CHECK(c.u_p == doctest::Approx(0.25));

    Calibrated onehot = calibrate(m, {1.0, 0.0});  // c* = 1
    CHECK(onehot.p_calibrated == 1.0);
    CHECK(onehot.u_p == 0.0);

    // A near-tied vector is at least as uncertain as a decisive one.
    Calibrated tied = calibrate(m, {0.5, 0.499, 0.001});
    Calibrated decisive = calibrate(m, {0.9, 0.05, 0.05});
    CHECK(tied.u_p >= decisive.u_p);
}

TEST_CASE("calibrate_detection carries detection identity and calibration") {
    NonconformityModel m = model_with_scores({0.05, 0.2, 0.5, 0.9});
    Detection d;
    d.observer_id = 7;
    d.object_id = 42;
    d.confidence_vector = {0.5, 0.45, 0.05};
    CalibratedDetection cd = calibrate_detection(m, d);
    CHECK(cd.detection.object_id == 42);
    CHECK(cd.predicted_class == 0);
    CHECK(cd.c_star == doctest::Approx(0.55));
    CHECK(cd.p_calibrated == doctest::Approx(0.75));
    CHECK(cd.u_p == doctest::Approx(0.25));
}

TEST_CASE("prediction band is the argmax singleton; ties are degenerate") {
    auto band = [](std::vector<double> conf) {
        return prediction_band(conf, singleton_threshold(conf)).class_indices;
    };
    CHECK(band({0.7, 0.2, 0.1}) == std::vector<int>{0});
    CHECK(band({0.4, 0.35, 0.25}) == std::vector<int>{0});
    CHECK(band({0.1, 0.2, 0.7}) == std::vector<int>{2});
    CHECK_THROWS_AS((band({0.5, 0.5})), InvariantError);
}

TEST_CASE("coverage: a noise-free detector covers perfectly") {
    std::vector<LabelledConfidence> set;
    for (int i = 0; i < 100; ++i) set.push_back({{0.97, 0.01, 0.02}, 0});
    NonconformityModel m = fit_calibrator(set);
    CoverageResult r = coverage_check(m, set);
    CHECK(r.coverage == 1.0);
}

TEST_CASE("coverage: synthetic detector satisfies the conformal bound") {
    SensorConfig sensor;
    sensor.noise_temp = 0.5;
    auto draws = synthesize_calibration_set(2000, sensor, 7);
    std::vector<LabelledConfidence> calib(draws.begin(), draws.begin() + 1000);
    std::vector<LabelledConfidence> test(draws.begin() + 1000, draws.end());
    NonconformityModel m = fit_calibrator(calib);
    CoverageResult r = coverage_check(m, test);
    CHECK(r.coverage >= r.mean_p_calibrated - 0.05);

    // In-sample: calibration used as its own test set.
    CoverageResult in_sample = coverage_check(m, calib);
    CHECK(in_sample.coverage >= in_sample.mean_p_calibrated - 1e-12);
}

TEST_CASE("calibrator persistence round-trips and validates") {
    NonconformityModel m = model_with_scores({0.05, 0.2, 0.5, 0.9}, CdfMode::corrected);
    std::string text = serialize_calibrator(m);
    NonconformityModel back = deserialize_calibrator(text);
    CHECK(back.scores == m.scores);
    CHECK(back.mode == m.mode);

    auto path = std::filesystem::temp_directory_path() / "uncap_calib_test.json";
    save_calibrator(m, path.string());
    NonconformityModel loaded = load_calibrator(path.string());
    CHECK(loaded.scores == m.scores);
    CHECK(loaded.mode == m.mode);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(deserialize_calibrator("not json"), ParseError);
    CHECK_THROWS_AS(deserialize_calibrator(R"({"scores": []})"), InvariantError);
    CHECK_THROWS_AS(deserialize_calibrator(R"({"scores": [0.5, 0.2]})"), InvariantError);
    CHECK_THROWS_AS(deserialize_calibrator(R"({"scores": [0.5, 1.2]})"), InvariantError);
}

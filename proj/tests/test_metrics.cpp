#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "uncap/common.hpp"
#include "uncap/metrics.hpp"

using namespace uncap;

namespace {
const std::string kDataDir = UNCAP_DATA_DIR;
}

TEST_CASE("route completion: full, none, and interrupted at a collision") {
    std::vector<Vec2> route = {{0, 0}, {100, 0}};

    std::vector<Vec2> full;
    for (int i = 0; i <= 100; ++i) full.push_back({static_cast<double>(i), 0.0});
    CHECK(route_completion(full, route) == 1.0);

    std::vector<Vec2> parked(20, Vec2{0.0, 0.0});
    CHECK(route_completion(parked, route) == 0.0);

    // Half the route driven, then a collision at index 50 truncates credit.
    CHECK(route_completion(full, route, 50) == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("route completion: progress is clipped and overshoot does not exceed 1") {
    std::vector<Vec2> route = {{0, 0}, {10, 0}};
    CHECK(route_completion({{25.0, 0.0}}, route) == 1.0);
    CHECK_THROWS_AS((route_completion({{0, 0}}, {{5, 5}})), InvariantError);
    CHECK_THROWS_AS((route_completion({{0, 0}}, {{5, 5}, {5, 5}})), InvariantError);
}

TEST_CASE("infraction penalty multiplies coefficients") {
    CHECK(infraction_penalty({}) == 1.0);
    CHECK(infraction_penalty({{10, InfractionKind::collision_vehicle, 0.60}}) ==
          doctest::Approx(0.60));
    CHECK(infraction_penalty({{10, InfractionKind::collision_vehicle, 0.60},
                              {20, InfractionKind::red_light, 0.70}}) == doctest::Approx(0.42));
}

TEST_CASE("driving score composes route completion and penalty") {
    CHECK(driving_score(0.892, 0.90) == doctest::Approx(0.8028).epsilon(1e-3));
    CHECK(driving_score(0.872, 0.90) == doctest::Approx(0.7848).epsilon(1e-3));
    CHECK(driving_score(0.883, 0.78) == doctest::Approx(0.6887).epsilon(1e-3));
    CHECK(driving_score(1.0, 1.0) == 1.0);
    CHECK_THROWS_AS(driving_score(1.2, 0.5), InvariantError);
    CHECK_THROWS_AS(driving_score(0.5, -0.1), InvariantError);
}

TEST_CASE("information gain: documented values, identity, empty") {
    CHECK(information_gain({{0.25, 0.71}}) == doctest::Approx(1.0438).epsilon(1e-3));
    CHECK(information_gain({{0.43, 0.44}}) == doctest::Approx(0.0230).epsilon(1e-2));
    CHECK(information_gain({{0.6, 0.6}, {0.3, 0.3}}) == 0.0);
    CHECK(std::isnan(information_gain({})));
    CHECK_THROWS_AS((information_gain({{0.0, 0.5}})), InvariantError);
}

TEST_CASE("distance margin: parallel lanes and collisions") {
    std::vector<Vec2> a, b;
    for (int i = 0; i < 50; ++i) {
        a.push_back({static_cast<double>(i), 0.0});
        b.push_back({static_cast<double>(i), 4.0});
    }
    // 4 m center separation, two 2 m-wide vehicles (half-width 1 m each).
    CHECK(min_distance_margin(a, b, 1.0, 1.0) == doctest::Approx(2.0));
    CHECK(min_distance_margin(a, a, 1.0, 1.0) <= 0.0);
    CHECK_THROWS_AS(
        (min_distance_margin(a, std::vector<Vec2>(b.begin(), b.begin() + 10), 1.0, 1.0)),
        InvariantError);
    CHECK_THROWS_AS((min_distance_margin({}, {}, 1.0, 1.0)), InvariantError);
}

TEST_CASE("jerk RMS: constant acceleration has zero jerk") {
    std::vector<double> ramp;
    for (int i = 0; i < 20; ++i) ramp.push_back(i * 0.3);
    CHECK(jerk_rms(ramp, 0.1) == doctest::Approx(0.0));
    // A single acceleration step of da over one dt contributes da/dt^2 once.
    std::vector<double> step = {0.0, 0.0, 0.0, 1.0, 2.0, 3.0};
    // accelerations: 0,0,10,10,10 -> jerk nonzero only at the kink.
    CHECK(jerk_rms(step, 0.1) > 0.0);
    CHECK(jerk_rms({1.0, 2.0}, 0.1) == 0.0);  // too short
}

TEST_CASE("infraction names round-trip; terminal kinds are collisions") {
    for (InfractionKind k :
         {InfractionKind::collision_vehicle, InfractionKind::collision_static,
          InfractionKind::red_light, InfractionKind::stop_sign, InfractionKind::lane_invasion})
        CHECK(parse_infraction(infraction_name(k)) == k);
    CHECK(!parse_infraction("jaywalking").has_value());
    CHECK(infraction_is_terminal(InfractionKind::collision_vehicle));
    CHECK(infraction_is_terminal(InfractionKind::collision_static));
    CHECK(!infraction_is_terminal(InfractionKind::red_light));
    CHECK(!infraction_is_terminal(InfractionKind::lane_invasion));
}

TEST_CASE("penalty table loads from the bundled configuration") {
    PenaltyTable t = load_penalty_table(kDataDir + "/penalties.json");
    CHECK(t.coefficient(InfractionKind::collision_vehicle) == doctest::Approx(0.60));
    CHECK(t.coefficient(InfractionKind::collision_static) == doctest::Approx(0.65));
    CHECK(t.coefficient(InfractionKind::red_light) == doctest::Approx(0.70));
    CHECK(t.coefficient(InfractionKind::stop_sign) == doctest::Approx(0.80));
    CHECK(t.coefficient(InfractionKind::lane_invasion) == doctest::Approx(0.90));
    CHECK_THROWS_AS(load_penalty_table(kDataDir + "/does_not_exist.json"), ParseError);
}

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uncap/geometry.hpp"

namespace uncap {

using VehicleId = int;

struct CavState {
    VehicleId id = 0;
    Vec2 position;
    Vec2 velocity;
    double heading = 0.0;  // radians, CCW from East
    Vec2 goal_position;
    std::vector<Vec2> route;

    double speed() const { return velocity.norm(); }
};

struct ObjectPose {
    int tick = 0;
    Vec2 location;
    double speed = 0.0;
    double heading = 0.0;
};

struct ObjectTruth {
    VehicleId object_id = 0;
    int class_label = 0;
    std::array<double, 3> extent = {2.3, 1.0, 0.9};  // half-extents, meters
    std::vector<ObjectPose> trajectory;               // sorted by tick

    // Pose at a tick: last known pose is held past the end of the trajectory.
    const ObjectPose& pose_at(int tick) const;
};

struct Detection {
    VehicleId observer_id = 0;
    VehicleId object_id = 0;
    Vec2 location;
    std::array<double, 3> extent = {2.3, 1.0, 0.9};
    double speed = 0.0;
    double heading = 0.0;
    std::vector<double> confidence_vector;  // L >= 2, sums to 1

    int predicted_class() const;
    double max_confidence() const;
};

struct Lane {
    int id = 0;
    std::vector<Vec2> polyline;
};

struct SensorConfig {
    double range_m = 60.0;
    double fov_rad = 2.0 * M_PI;
    double noise_temp = 0.3;
    double noise_sigma = 0.35;  // std-dev of the logit perturbation
    int num_classes = 4;
};

struct KinematicsConfig {
    double a_max = 3.0;    // m/s^2
    double b_max = 8.0;    // m/s^2
    double v_max = 40.0;   // m/s
    double k_steer = 0.5;
};

struct Control {
    double throttle = 0.0;  // [0,1]
    double brake = 0.0;     // [0,1]
    double steer = 0.0;     // [-1,1]
};

struct DecisionPoint {
    int tick = 0;
    std::string intention;  // merge | proceed | turn | stop-context
};

struct CavSpec {
    CavState initial;
    std::vector<DecisionPoint> decision_points;
    double cruise_speed = -1.0;  // <0: use initial speed
};

struct Scenario {
    std::string name;
    double tick_rate_hz = 10.0;
    int duration_ticks = 0;
    std::vector<Lane> lanes;
    std::vector<CavSpec> cavs;
    std::vector<ObjectTruth> objects;
    // Scenario-supplied detections: cav id -> tick -> detections. These take
    // precedence over synthesis when present.
    std::map<VehicleId, std::map<int, std::vector<Detection>>> detections;
    SensorConfig sensor;
    KinematicsConfig kinematics;
    VehicleId ego_id = 0;  // metrics subject; defaults to first CAV
    std::optional<std::pair<VehicleId, VehicleId>> conflict_pair;

    const ObjectTruth* find_object(VehicleId id) const;
    const CavSpec* find_cav(VehicleId id) const;
};

Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& json_text, const std::string& origin);

// Point-mass update. speed' = clamp(speed + (a_max*throttle - b_max*brake)*dt,
// 0, v_max); heading' = heading + steer*k_steer*dt*speed'; position advances
// along heading'. Inputs are clamped to their valid ranges.
CavState step_kinematics(const CavState& state, const Control& control, double dt,
                         const KinematicsConfig& cfg = {});

// Synthetic detections for the observer: objects within range and field of
// view, not occluded by another object's axis-aligned footprint. Confidence
// vectors are softmax(one_hot(true class)/noise_temp + noise_sigma * gaussian),
// deterministic given the seed.
std::vector<Detection> synthesize_detections(const std::vector<ObjectTruth>& truth,
                                             int tick, const CavState& observer,
                                             const SensorConfig& sensor,
                                             uint64_t rng_seed);

// Convenience for calibration-set generation: (confidence_vector, true_class)
// pairs drawn from the same noise model as synthesize_detections.
std::vector<std::pair<std::vector<double>, int>> synthesize_calibration_set(
    int n, const SensorConfig& sensor, uint64_t rng_seed);

}  // namespace uncap

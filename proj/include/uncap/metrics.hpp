#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uncap/geometry.hpp"

namespace uncap {

enum class InfractionKind {
    collision_vehicle,
    collision_static,
    red_light,
    stop_sign,
    lane_invasion
};

const char* infraction_name(InfractionKind k);
std::optional<InfractionKind> parse_infraction(const std::string& name);
bool infraction_is_terminal(InfractionKind k);

struct InfractionEvent {
    int tick = 0;
    InfractionKind kind = InfractionKind::collision_vehicle;
    double penalty_coefficient = 1.0;
};

// Coefficients per infraction kind; defaults follow the usual simulator
// convention and can be overridden from penalties.json.
struct PenaltyTable {
    std::map<InfractionKind, double> coefficients = {
        {InfractionKind::collision_vehicle, 0.60},
        {InfractionKind::collision_static, 0.65},
        {InfractionKind::red_light, 0.70},
        {InfractionKind::stop_sign, 0.80},
        {InfractionKind::lane_invasion, 0.90},
    };

    double coefficient(InfractionKind k) const { return coefficients.at(k); }
};

PenaltyTable load_penalty_table(const std::string& path);

struct EpisodeMetrics {
    double ds = 0.0;
    double rc = 0.0;
    double ip = 1.0;
    double tb_kb = 0.0;  // KB = 1024 bytes
    double ig_perception = std::numeric_limits<double>::quiet_NaN();
    double ig_decision = std::numeric_limits<double>::quiet_NaN();
    double min_distance_margin_m = std::numeric_limits<double>::quiet_NaN();
    double jerk_rms = 0.0;  // comfort, logged but outside DS

    bool operator==(const EpisodeMetrics& o) const = default;
};

// Arc-length of the route covered by the projected trajectory up to the first
// terminal failure, as a fraction of total route length, clipped to [0,1].
double route_completion(const std::vector<Vec2>& trajectory, const std::vector<Vec2>& route,
                        int first_failure_index = -1);

// Product of coefficients, floored at 0; empty -> 1.0.
double infraction_penalty(const std::vector<InfractionEvent>& events);

// DS = RC * IP (comfort is logged separately, not part of the composite).
double driving_score(double rc, double ip);

// Mean of ln(p_with / p_without) over the pairs, in nats.
double information_gain(const std::vector<std::pair<double, double>>& confidence_pairs);

// Minimum over ticks of center distance minus the sum of the two vehicles'
// half-widths, for a designated pair of time-aligned trajectories.
double min_distance_margin(const std::vector<Vec2>& traj_a, const std::vector<Vec2>& traj_b,
                           double half_width_a, double half_width_b);

// RMS of the ego's jerk (finite differences over speed), for comfort logging.
double jerk_rms(const std::vector<double>& speeds, double dt);

}  // namespace uncap

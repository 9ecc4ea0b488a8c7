#include "uncap/metrics.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "uncap/common.hpp"

namespace uncap {

const char* infraction_name(InfractionKind k) {
    switch (k) {
        case InfractionKind::collision_vehicle: return "collision_vehicle";
        case InfractionKind::collision_static: return "collision_static";
        case InfractionKind::red_light: return "red_light";
        case InfractionKind::stop_sign: return "stop_sign";
        case InfractionKind::lane_invasion: return "lane_invasion";
    }
    return "?";
}

std::optional<InfractionKind> parse_infraction(const std::string& name) {
    for (InfractionKind k :
         {InfractionKind::collision_vehicle, InfractionKind::collision_static,
          InfractionKind::red_light, InfractionKind::stop_sign, InfractionKind::lane_invasion})
        if (name == infraction_name(k)) return k;
    return std::nullopt;
}

bool infraction_is_terminal(InfractionKind k) {
    return k == InfractionKind::collision_vehicle || k == InfractionKind::collision_static;
}

PenaltyTable load_penalty_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open penalty table: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    PenaltyTable table;
    for (const auto& [key, value] : j.items()) {
        auto kind = parse_infraction(key);
        if (!kind) throw ParseError(path + ": unknown infraction kind '" + key + "'");
        double c = value.get<double>();
        if (c <= 0.0 || c > 1.0)
            throw InvariantError(path + ": coefficient for " + key + " must be in (0,1]");
        table.coefficients[*kind] = c;
    }
    return table;
}

double route_completion(const std::vector<Vec2>& trajectory, const std::vector<Vec2>& route,
                        int first_failure_index) {
    if (route.size() < 2) throw InvariantError("route must have >= 2 waypoints");
    double total = polyline_length(route);
    if (total <= 0) throw InvariantError("route must have positive length");
    size_t end = trajectory.size();
    if (first_failure_index >= 0)
        end = std::min(end, static_cast<size_t>(first_failure_index) + 1);
    double best = 0.0;
    for (size_t i = 0; i < end; ++i)
        best = std::max(best, project_arclength(route, trajectory[i]));
    return std::clamp(best / total, 0.0, 1.0);
}

double infraction_penalty(const std::vector<InfractionEvent>& events) {
    double ip = 1.0;
    for (const auto& e : events) ip *= e.penalty_coefficient;
    return std::max(ip, 0.0);
}

double driving_score(double rc, double ip) {
    if (rc < 0 || rc > 1 || ip < 0 || ip > 1)
        throw InvariantError("driving_score inputs must be in [0,1]");
    return rc * ip;
}

double information_gain(const std::vector<std::pair<double, double>>& confidence_pairs) {
    if (confidence_pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (const auto& [p_without, p_with] : confidence_pairs) {
        if (p_without <= 0) throw InvariantError("information_gain requires p_without > 0");
        sum += std::log(p_with / p_without);
    }
    return sum / confidence_pairs.size();
}

double min_distance_margin(const std::vector<Vec2>& traj_a, const std::vector<Vec2>& traj_b,
                           double half_width_a, double half_width_b) {
    if (traj_a.size() != traj_b.size())
        throw InvariantError("trajectories must be time-aligned (equal length)");
    if (traj_a.empty()) throw InvariantError("trajectories must be non-empty");
    double best = std::numeric_limits<double>::max();
    for (size_t i = 0; i < traj_a.size(); ++i)
        best = std::min(best, (traj_a[i] - traj_b[i]).norm() - (half_width_a + half_width_b));
    return best;
}

double jerk_rms(const std::vector<double>& speeds, double dt) {
    if (speeds.size() < 3 || dt <= 0) return 0.0;
    double sum2 = 0.0;
    size_t n = 0;
    for (size_t i = 2; i < speeds.size(); ++i) {
        double a1 = (speeds[i] - speeds[i - 1]) / dt;
        double a0 = (speeds[i - 1] - speeds[i - 2]) / dt;
        double jerk = (a1 - a0) / dt;
        sum2 += jerk * jerk;
        ++n;
    }
    return std::sqrt(sum2 / n);
}

}  // namespace uncap

#include "uncap/planning.hpp"

#include <cmath>
#include <regex>
#include <sstream>

#include "uncap/geometry.hpp"

namespace uncap {

const char* action_name(PlanAction a) {
    switch (a) {
        case PlanAction::merge: return "merge";
        case PlanAction::no_merge: return "no merge";
        case PlanAction::proceed: return "proceed";
        case PlanAction::stop: return "stop";
        case PlanAction::yield: return "yield";
    }
    return "?";
}

std::optional<PlanAction> parse_action(const std::string& name) {
    std::string n;
    for (char c : name) n += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (n == "merge") return PlanAction::merge;
    if (n == "no merge" || n == "no_merge") return PlanAction::no_merge;
    if (n == "proceed") return PlanAction::proceed;
    if (n == "stop") return PlanAction::stop;
    if (n == "yield") return PlanAction::yield;
    return std::nullopt;
}

std::optional<double> PlanDecision::u_d() const {
    if (!probability) return std::nullopt;
    return decision_uncertainty(*probability);
}

double decision_uncertainty(double probability) {
    if (probability <= 0.0 || probability > 1.0)
        throw InvariantError("probability must be in (0,1]");
    return -std::log(probability);
}

double plan_pmi(double p_without, double p_with) {
    if (p_without < 0 || p_with < 0) throw InvariantError("probabilities must be >= 0");
    if (p_without == 0.0) {
        if (p_with == 0.0) throw InvariantError("plan_pmi undefined for 0/0");
        return std::numeric_limits<double>::infinity();
    }
    return std::log(p_with / p_without);
}

namespace {

struct DescribedVehicle {
    int id = 0;
    double confidence = 0.0;
    double rel_angle_deg = 0.0;  // from the 16-wind token, relative to ego facing
    double distance = 0.0;
    double facing_deg = 0.0;  // compass
    bool fast = false;
    bool adjacent_lane = false;
};

struct ParsedScene {
    double ego_facing_deg = 0.0;
    bool has_ego_line = false;
    std::vector<DescribedVehicle> vehicles;
};

ParsedScene parse_scene(const std::string& text) {
    static const std::regex vehicle_re(
        R"(^Vehicle (\d+) \(perception confidence ([0-9.]+)/uncertainty [0-9.]+\): )"
        R"(Relative direction to Ego CAV: ([A-Z]+), Distance: ([-+0-9.eE]+) \((?:close|far)\), )"
        R"(Facing ([A-Z]+), Speed: (fast|slow)(.*)$)");
    static const std::regex ego_re(R"(^Ego Vehicle: Facing ([A-Z]+), Speed: .*$)");

    ParsedScene scene;
    std::map<int, DescribedVehicle> by_id;  // dedup, keep highest confidence
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_match(line, m, ego_re)) {
            scene.ego_facing_deg = compass16_angle(m[1]);
            scene.has_ego_line = true;
            continue;
        }
        if (!std::regex_match(line, m, vehicle_re)) continue;
        DescribedVehicle v;
        v.id = std::stoi(m[1]);
        v.confidence = std::stod(m[2]);
        v.rel_angle_deg = compass16_angle(m[3]);
        v.distance = std::stod(m[4]);
        v.facing_deg = compass16_angle(m[5]);
        v.fast = m[6] == "fast";
        v.adjacent_lane = m[7].str().find("adjacent lane") != std::string::npos;
        auto it = by_id.find(v.id);
        if (it == by_id.end() || v.confidence > it->second.confidence) by_id[v.id] = v;
    }
    for (const auto& [_, v] : by_id) scene.vehicles.push_back(v);
    return scene;
}

bool is_behind(const DescribedVehicle& v) {
    return v.rel_angle_deg > 90.0 && v.rel_angle_deg < 270.0;
}

bool is_ahead(const DescribedVehicle& v) { return !is_behind(v); }

}  // namespace

PlanDecision MockPlanner::decide(const PlanQuery& query) {
    ParsedScene scene = parse_scene(query.combined_text());
    PlanDecision d;

    if (query.intention == "merge") {
        if (scene.vehicles.empty()) {
            d.action = PlanAction::no_merge;
            d.reason = "No descriptions are provided about other cars, so the decision is to not merge.";
            d.probability = cfg_.p_single_rule;
            return d;
        }
        bool any_blocking = false;
        bool any_support = false;
        int blocking_id = 0, support_id = 0;
        for (const auto& v : scene.vehicles) {
            if (!v.adjacent_lane) continue;
            double speed_rep = v.fast ? cfg_.fast_speed_rep_mps : cfg_.slow_speed_rep_mps;
            double required = std::max(
                cfg_.base_clearance_m,
                cfg_.base_clearance_m + cfg_.clearance_per_mps * (speed_rep - cfg_.clearance_speed_pivot));
            bool approaching =
                is_ahead(v) && compass_diff_deg(v.facing_deg, scene.ego_facing_deg) > 112.5;
            if (v.distance < required || approaching) {
                any_blocking = true;
                blocking_id = v.id;
            } else if (is_behind(v) && v.distance > required) {
                any_support = true;
                support_id = v.id;
            }
        }
        if (any_blocking) {
            d.action = PlanAction::no_merge;
            d.reason = "Vehicle " + std::to_string(blocking_id) +
                       " in the adjacent lane does not leave safe clearance to merge.";
            d.probability = any_support ? cfg_.p_conflict : cfg_.p_single_rule;
        } else if (any_support) {
            d.action = PlanAction::merge;
            d.reason = "Vehicle " + std::to_string(support_id) +
                       " in the adjacent lane is behind the ego vehicle with clearance over " +
                       fmt_sig6(cfg_.base_clearance_m) + ", so it is safe to merge.";
            d.probability = cfg_.p_single_rule;
        } else {
            d.action = PlanAction::merge;
            d.reason = "No adjacent-lane vehicle blocks the merge; the right lane is open.";
            d.probability = cfg_.p_single_rule;
        }
        return d;
    }

    // Non-merge intentions: stop when a moving cross/oncoming vehicle is ahead
    // inside the hazard radius, otherwise proceed.
    int hazard_id = 0;
    for (const auto& v : scene.vehicles) {
        if (!is_ahead(v)) continue;
        if (v.distance >= cfg_.stop_range_m) continue;
        if (compass_diff_deg(v.facing_deg, scene.ego_facing_deg) <= 45.0) continue;
        hazard_id = v.id;
        break;
    }
    if (hazard_id != 0) {
        d.action = PlanAction::stop;
        d.reason = "Vehicle " + std::to_string(hazard_id) +
                   " ahead is crossing the ego path within the hazard radius.";
    } else {
        d.action = PlanAction::proceed;
        d.reason = "No crossing vehicle inside the hazard radius; the path ahead is clear.";
    }
    d.probability = cfg_.p_single_rule;
    return d;
}

double MockPlanner::score(const PlanQuery& query, PlanAction action) {
    PlanDecision d = decide(query);
    double p = d.probability.value_or(1.0);
    return d.action == action ? p : 1.0 - p;
}

double LlmPlanner::score(const PlanQuery& query, PlanAction action) {
    PlanDecision d = decide(query);
    double p = d.probability.value_or(1.0);
    return d.action == action ? p : 1.0 - p;
}

FilterResult filter_peer_messages(const PlanQuery& base_query,
                                  const std::vector<PeerMessage>& peer_messages,
                                  Planner& planner) {
    FilterResult result;
    try {
        result.base_decision = planner.decide(base_query);
    } catch (const Error&) {
        // Without even an ego-only decision there is nothing to degrade to.
        throw;
    }

    try {
        for (const auto& pm : peer_messages) {
            PlanQuery with = base_query;
            with.fused_message = pm.text;
            PlanDecision with_dec = planner.decide(with);

            PeerPmiRecord rec;
            rec.peer_id = pm.peer_id;
            if (with_dec.probability && result.base_decision.probability) {
                // Hold the with-information plan fixed and score it under both
                // observation sets.
                rec.p_with = *with_dec.probability;
                rec.p_without = planner.score(base_query, with_dec.action);
                rec.pmi = plan_pmi(rec.p_without, rec.p_with);
            } else {
                rec.pmi = 0.0;  // no probabilities: peer cannot be credited
            }
            rec.plan_flip = with_dec.action != result.base_decision.action;
            rec.included = rec.pmi > 0.0;
            if (rec.included) result.included_peers.push_back(pm.peer_id);
            result.records.push_back(rec);
        }

        if (result.included_peers.empty()) {
            result.decision = result.base_decision;
            result.p_without_final = result.base_decision.probability.value_or(
                std::numeric_limits<double>::quiet_NaN());
            return result;
        }

        PlanQuery joint = base_query;
        std::string fused;
        for (const auto& pm : peer_messages) {
            bool included = false;
            for (int id : result.included_peers)
                if (id == pm.peer_id) included = true;
            if (!included) continue;
            if (!fused.empty()) fused += "\n";
            fused += pm.text;
        }
        joint.fused_message = fused;
        result.decision = planner.decide(joint);
        result.p_without_final = planner.score(base_query, result.decision.action);
        return result;
    } catch (const Error&) {
        // Planner failure mid-filter: degrade to the ego-only decision.
        result.planner_fallback = true;
        result.decision = result.base_decision;
        result.included_peers.clear();
        result.p_without_final =
            result.base_decision.probability.value_or(std::numeric_limits<double>::quiet_NaN());
        return result;
    }
}

std::string build_perception_prompt(int ego_id, const std::string& intention) {
    std::ostringstream p;
    p << "You are an AI assistant that helps with safe driving from a high-level perspective.\n"
         "You are working with a scenario in which there are some autonomous cars and many regular cars.\n"
         "You must refer to them by their IDs, which are used to label them.\n"
         "You are provided with two images:\n"
         "- a birds-eye view of an intersection with some autonomous cars and some regular cars;\n"
         "- the front view of Vehicle "
      << ego_id
      << ", called the Ego CAV.\n"
         "In the birds-eye view, the autonomous cars are colored pink and the regular cars are colored yellow.\n"
         "You must refer to them by their IDs, which are used to label them.\n"
         "Directions on this map are given as you see them: North is up, South is down, East is right, West is left.\n"
         "The vehicle of interest in this scenario is Vehicle "
      << ego_id << ", called the Ego CAV. It currently " << intention
      << ". It is currently facing north.\n"
         "Your task is to discern which vehicles might interfere with the motion of the Ego CAV "
         "such that it should know about them in order to make a safe decision.\n"
         "At the end of your response, you must include a space-separated list of the vehicle IDs "
         "of interest in this EXACT format:\n"
         "id_1 id_2, ... id_n.\n"
         "Or, only if there are no vehicle IDs of interest, include at the end of your response "
         "the number: 0.\n";
    return p.str();
}

std::string build_planning_prompt(const std::string& ego_description) {
    std::ostringstream p;
    p << "Here is the situational description from the perspective of the Ego CAV: "
      << ego_description
      << "\nIf 0 descriptions of other cars are provided, don't merge. MERGE DECISION RULES:\n"
         "1. Merge only if the right lane is open.\n"
         "2. Do not merge if a vehicle approaches in the right lane.\n"
         "3. Merge safely if a vehicle in the right lane is behind the ego vehicle and its distance > 10.\n"
         "4. Do not merge if any vehicle in the right lane is closer than 10 units.\n"
         "5. Account for vehicle speed: faster vehicles require more clearance.\n"
         "Do not be overly safe. If you see clearance over 10 distance you have clearance to merge.\n"
         "Analyze the relative positions, distances, and speeds of vehicles.\n"
         "Respond strictly in this format:\n"
         "action: [merge|no merge]\n"
         "reason: [brief explanation of decision based on vehicle positions and distances]\n";
    return p.str();
}

}  // namespace uncap

#include "uncap/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "uncap/common.hpp"
#include "uncap/rng.hpp"

namespace uncap {

using nlohmann::json;

const ObjectPose& ObjectTruth::pose_at(int tick) const {
    const ObjectPose* best = &trajectory.front();
    for (const auto& p : trajectory) {
        if (p.tick <= tick) best = &p;
        else break;
    }
    return *best;
}

int Detection::predicted_class() const {
    return static_cast<int>(std::distance(
        confidence_vector.begin(),
        std::max_element(confidence_vector.begin(), confidence_vector.end())));
}

double Detection::max_confidence() const {
    return *std::max_element(confidence_vector.begin(), confidence_vector.end());
}

const ObjectTruth* Scenario::find_object(VehicleId id) const {
    for (const auto& o : objects)
        if (o.object_id == id) return &o;
    return nullptr;
}

const CavSpec* Scenario::find_cav(VehicleId id) const {
    for (const auto& c : cavs)
        if (c.initial.id == id) return &c;
    return nullptr;
}

namespace {

Vec2 parse_vec2(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 2)
        throw ParseError("field '" + field + "' must be a 2-element array");
    return {j[0].get<double>(), j[1].get<double>()};
}

void validate_cav(const CavState& c) {
    std::string tag = "cav " + std::to_string(c.id);
    if (c.route.empty())
        throw InvariantError(tag + ": route must be non-empty");
    Vec2 last = c.route.back();
    if ((c.goal_position - last).norm() > 1e-9)
        throw InvariantError(tag + ": goal_position must equal the final route waypoint");
    if (c.speed() > 1e-6) {
        double h = std::atan2(c.velocity.y, c.velocity.x);
        if (std::fabs(wrap_angle(h - c.heading)) > 1e-6)
            throw InvariantError(tag + ": heading inconsistent with velocity direction");
    }
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }

    Scenario s;
    s.name = j.value("name", origin);
    s.tick_rate_hz = j.value("tick_rate_hz", 10.0);
    if (s.tick_rate_hz <= 0) throw InvariantError("tick_rate_hz must be > 0");
    s.duration_ticks = j.value("duration_ticks", 0);

    if (j.contains("sensor")) {
        const auto& js = j["sensor"];
        s.sensor.range_m = js.value("range_m", s.sensor.range_m);
        s.sensor.fov_rad = js.value("fov_rad", s.sensor.fov_rad);
        s.sensor.noise_temp = js.value("noise_temp", s.sensor.noise_temp);
        s.sensor.noise_sigma = js.value("noise_sigma", s.sensor.noise_sigma);
        s.sensor.num_classes = js.value("num_classes", s.sensor.num_classes);
    }
    if (j.contains("kinematics")) {
        const auto& jk = j["kinematics"];
        s.kinematics.a_max = jk.value("a_max", s.kinematics.a_max);
        s.kinematics.b_max = jk.value("b_max", s.kinematics.b_max);
        s.kinematics.v_max = jk.value("v_max", s.kinematics.v_max);
        s.kinematics.k_steer = jk.value("k_steer", s.kinematics.k_steer);
    }

    for (const auto& jl : j.value("lanes", json::array())) {
        Lane lane;
        lane.id = jl.at("id").get<int>();
        for (const auto& p : jl.at("polyline")) lane.polyline.push_back(parse_vec2(p, "lane polyline"));
        s.lanes.push_back(std::move(lane));
    }

    if (!j.contains("cavs") || j["cavs"].empty())
        throw InvariantError("scenario must contain >= 1 CAV");
    for (const auto& jc : j["cavs"]) {
        CavSpec spec;
        CavState& c = spec.initial;
        c.id = jc.at("id").get<int>();
        c.position = parse_vec2(jc.at("position"), "position");
        c.velocity = parse_vec2(jc.at("velocity"), "velocity");
        c.heading = jc.at("heading").get<double>();
        for (const auto& p : jc.at("route")) c.route.push_back(parse_vec2(p, "route"));
        c.goal_position = jc.contains("goal") ? parse_vec2(jc["goal"], "goal")
                                              : (c.route.empty() ? Vec2{} : c.route.back());
        validate_cav(c);
        spec.cruise_speed = jc.value("cruise_speed", -1.0);
        for (const auto& jd : jc.value("decision_points", json::array())) {
            DecisionPoint dp;
            dp.tick = jd.at("tick").get<int>();
            dp.intention = jd.value("intention", "proceed");
            spec.decision_points.push_back(dp);
        }
        for (const auto& existing : s.cavs)
            if (existing.initial.id == c.id)
                throw InvariantError("duplicate cav id " + std::to_string(c.id));
        s.cavs.push_back(std::move(spec));
    }
    s.ego_id = j.value("ego_id", s.cavs.front().initial.id);
    if (!s.find_cav(s.ego_id))
        throw InvariantError("ego_id " + std::to_string(s.ego_id) + " is not a CAV");

    for (const auto& jo : j.value("objects", json::array())) {
        ObjectTruth o;
        o.object_id = jo.at("id").get<int>();
        o.class_label = jo.value("class", 0);
        if (o.class_label < 0 || o.class_label >= s.sensor.num_classes)
            throw InvariantError("object " + std::to_string(o.object_id) +
                                 ": class_label out of range");
        if (jo.contains("extent")) {
            const auto& e = jo["extent"];
            o.extent = {e[0].get<double>(), e[1].get<double>(), e[2].get<double>()};
            for (double v : o.extent)
                if (v <= 0)
                    throw InvariantError("object " + std::to_string(o.object_id) +
                                         ": extent components must be > 0");
        }
        for (const auto& jp : jo.at("per_tick")) {
            ObjectPose p;
            p.tick = jp.at("tick").get<int>();
            p.location = parse_vec2(jp.at("location"), "location");
            p.speed = jp.value("speed", 0.0);
            p.heading = jp.value("heading", 0.0);
            o.trajectory.push_back(p);
        }
        if (o.trajectory.empty())
            throw InvariantError("object " + std::to_string(o.object_id) +
                                 ": per_tick must be non-empty");
        std::sort(o.trajectory.begin(), o.trajectory.end(),
                  [](const ObjectPose& a, const ObjectPose& b) { return a.tick < b.tick; });
        s.objects.push_back(std::move(o));
    }

    if (j.contains("conflict_pair")) {
        const auto& cp = j["conflict_pair"];
        s.conflict_pair = {cp[0].get<int>(), cp[1].get<int>()};
    }

    if (j.contains("detections")) {
        for (const auto& [cav_key, ticks] : j["detections"].items()) {
            VehicleId cav_id = std::stoi(cav_key);
            if (!s.find_cav(cav_id))
                throw InvariantError("detections reference unknown cav id " + cav_key);
            for (const auto& [tick_key, dets] : ticks.items()) {
                int tick = std::stoi(tick_key);
                for (const auto& jd : dets) {
                    Detection d;
                    d.observer_id = cav_id;
                    d.object_id = jd.at("object_id").get<int>();
                    if (!s.find_object(d.object_id) && !s.find_cav(d.object_id))
                        throw InvariantError("detection references unknown object_id " +
                                             std::to_string(d.object_id));
                    d.location = parse_vec2(jd.at("location"), "location");
                    if (jd.contains("extent")) {
                        const auto& e = jd["extent"];
                        d.extent = {e[0].get<double>(), e[1].get<double>(), e[2].get<double>()};
                    }
                    d.speed = jd.value("speed", 0.0);
                    d.heading = jd.value("heading", 0.0);
                    d.confidence_vector = jd.at("confidence_vector").get<std::vector<double>>();
                    if (d.confidence_vector.size() < 2)
                        throw InvariantError("confidence_vector must have L >= 2 entries");
                    double sum = 0.0;
                    for (double v : d.confidence_vector) {
                        if (v < 0.0 || v > 1.0)
                            throw InvariantError("confidence_vector entries must be in [0,1]");
                        sum += v;
                    }
                    if (std::fabs(sum - 1.0) > 1e-9)
                        throw InvariantError("confidence_vector must sum to 1");
                    s.detections[cav_id][tick].push_back(std::move(d));
                }
            }
        }
    }

    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    Scenario s = parse_scenario(ss.str(), path);
    return s;
}

CavState step_kinematics(const CavState& state, const Control& control, double dt,
                         const KinematicsConfig& cfg) {
    double throttle = std::clamp(control.throttle, 0.0, 1.0);
    double brake = std::clamp(control.brake, 0.0, 1.0);
    double steer = std::clamp(control.steer, -1.0, 1.0);

    CavState out = state;
    double speed = state.speed();
    double speed_next =
        std::clamp(speed + (cfg.a_max * throttle - cfg.b_max * brake) * dt, 0.0, cfg.v_max);
    double heading_next = state.heading + steer * cfg.k_steer * dt * speed_next;
    out.heading = heading_next;
    out.velocity = {speed_next * std::cos(heading_next), speed_next * std::sin(heading_next)};
    out.position = state.position + out.velocity * dt;
    return out;
}

namespace {

std::vector<double> noisy_confidence(int true_class, int num_classes, double noise_temp,
                                     double noise_sigma, Rng& rng) {
    std::vector<double> logits(num_classes, 0.0);
    logits[true_class] = 1.0 / noise_temp;
    for (auto& l : logits) l += noise_sigma * rng.next_gaussian();
    double max_l = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    std::vector<double> conf(num_classes);
    for (int i = 0; i < num_classes; ++i) {
        conf[i] = std::exp(logits[i] - max_l);
        sum += conf[i];
    }
    for (auto& c : conf) c /= sum;
    return conf;
}

}  // namespace

std::vector<Detection> synthesize_detections(const std::vector<ObjectTruth>& truth, int tick,
                                             const CavState& observer,
                                             const SensorConfig& sensor, uint64_t rng_seed) {
    if (sensor.noise_temp <= 0) throw InvariantError("noise_temp must be > 0");
    if (sensor.noise_sigma <= 0) throw InvariantError("noise_sigma must be > 0");
    std::vector<Detection> out;
    for (const auto& obj : truth) {
        const ObjectPose& pose = obj.pose_at(tick);
        Vec2 rel = pose.location - observer.position;
        double dist = rel.norm();
        if (dist > sensor.range_m) continue;
        if (sensor.fov_rad < 2.0 * M_PI - 1e-9) {
            double bearing = std::atan2(rel.y, rel.x);
            if (std::fabs(wrap_angle(bearing - observer.heading)) > sensor.fov_rad / 2.0)
                continue;
        }
        bool occluded = false;
        for (const auto& other : truth) {
            if (other.object_id == obj.object_id) continue;
            const ObjectPose& op = other.pose_at(tick);
            Aabb box = footprint(op.location, other.extent[0], other.extent[1]);
            if (segment_intersects_aabb(observer.position, pose.location, box)) {
                occluded = true;
                break;
            }
        }
        if (occluded) continue;
        // Per-object noise stream: visibility of one object cannot perturb
        // another object's confidence vector.
        Rng obj_rng(mix_seed(rng_seed, static_cast<uint64_t>(obj.object_id), 0x0b5ec71));

        Detection d;
        d.observer_id = observer.id;
        d.object_id = obj.object_id;
        d.location = pose.location;
        d.extent = obj.extent;
        d.speed = pose.speed;
        d.heading = pose.heading;
        d.confidence_vector =
            noisy_confidence(obj.class_label, sensor.num_classes, sensor.noise_temp,
                             sensor.noise_sigma, obj_rng);
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<std::pair<std::vector<double>, int>> synthesize_calibration_set(
    int n, const SensorConfig& sensor, uint64_t rng_seed) {
    if (n <= 0) throw InvariantError("calibration sample count must be > 0");
    if (sensor.noise_temp <= 0) throw InvariantError("noise_temp must be > 0");
    if (sensor.noise_sigma <= 0) throw InvariantError("noise_sigma must be > 0");
    Rng rng(rng_seed);
    std::vector<std::pair<std::vector<double>, int>> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        int true_class = static_cast<int>(rng.next_u64() % sensor.num_classes);
        out.emplace_back(noisy_confidence(true_class, sensor.num_classes, sensor.noise_temp,
                                          sensor.noise_sigma, rng),
                         true_class);
    }
    return out;
}

}  // namespace uncap

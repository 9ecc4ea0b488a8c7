#include "uncap/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "uncap/common.hpp"

namespace uncap {

std::vector<std::pair<size_t, size_t>> match_objects(
    const std::vector<CalibratedDetection>& ego_dets,
    const std::vector<CalibratedDetection>& peer_dets, double gate_m, MatchMode mode) {
    if (gate_m <= 0) throw InvariantError("gate_m must be > 0");
    std::vector<std::pair<size_t, size_t>> matches;
    if (mode == MatchMode::by_object_id) {
        for (size_t i = 0; i < ego_dets.size(); ++i)
            for (size_t j = 0; j < peer_dets.size(); ++j)
                if (ego_dets[i].detection.object_id == peer_dets[j].detection.object_id) {
                    matches.emplace_back(i, j);
                    break;
                }
        return matches;
    }
    // Greedy nearest-center matching, each detection matched at most once.
    struct Cand {
        double dist;
        size_t i, j;
    };
    std::vector<Cand> cands;
    for (size_t i = 0; i < ego_dets.size(); ++i)
        for (size_t j = 0; j < peer_dets.size(); ++j) {
            double d = (ego_dets[i].detection.location - peer_dets[j].detection.location).norm();
            if (d <= gate_m) cands.push_back({d, i, j});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.i != b.i) return a.i < b.i;
        return a.j < b.j;
    });
    std::set<size_t> used_i, used_j;
    for (const auto& c : cands) {
        if (used_i.count(c.i) || used_j.count(c.j)) continue;
        used_i.insert(c.i);
        used_j.insert(c.j);
        matches.emplace_back(c.i, c.j);
    }
    std::sort(matches.begin(), matches.end());
    return matches;
}

FusedObject fuse(const std::optional<CalibratedDetection>& ego_det,
                 const std::vector<CalibratedDetection>& peer_dets) {
    if (!ego_det && peer_dets.empty())
        throw InvariantError("fuse requires at least one contributor");

    const CalibratedDetection* best = nullptr;
    bool best_is_ego = false;
    auto better = [&](const CalibratedDetection& cand, bool is_ego) {
        if (!best) return true;
        if (cand.p_calibrated > best->p_calibrated) return true;
        if (cand.p_calibrated < best->p_calibrated) return false;
        if (is_ego != best_is_ego) return is_ego;  // tie toward ego
        return cand.detection.observer_id < best->detection.observer_id;
    };
    FusedObject f;
    if (ego_det) {
        best = &*ego_det;
        best_is_ego = true;
        f.contributing_observers.push_back(ego_det->detection.observer_id);
        f.p_ego = ego_det->p_calibrated;
    }
    for (const auto& pd : peer_dets) {
        f.contributing_observers.push_back(pd.detection.observer_id);
        if (better(pd, false)) {
            best = &pd;
            best_is_ego = false;
        }
    }
    f.object_id = best->detection.object_id;
    f.p_fused = best->p_calibrated;
    f.u_fused = 1.0 - f.p_fused;
    f.best_observer = best->detection.observer_id;
    f.location = best->detection.location;
    f.speed = best->detection.speed;
    f.heading = best->detection.heading;
    f.extent = best->detection.extent;
    return f;
}

double perception_pmi(double p_ego, double p_fused) {
    if (p_ego < 0 || p_fused < 0) throw InvariantError("probabilities must be >= 0");
    if (p_ego == 0.0) {
        if (p_fused == 0.0) throw InvariantError("perception_pmi undefined for 0/0");
        return std::numeric_limits<double>::infinity();
    }
    return std::log(p_fused / p_ego);
}

std::vector<FusedObject> select_for_fusion(
    const std::vector<CalibratedDetection>& ego_dets,
    const std::map<VehicleId, std::vector<CalibratedDetection>>& peer_sets) {
    std::map<VehicleId, const CalibratedDetection*> ego_by_id;
    for (const auto& d : ego_dets) ego_by_id[d.detection.object_id] = &d;

    std::map<VehicleId, std::vector<const CalibratedDetection*>> peers_by_id;
    for (const auto& [peer, dets] : peer_sets)
        for (const auto& d : dets) peers_by_id[d.detection.object_id].push_back(&d);

    std::set<VehicleId> all_ids;
    for (const auto& [id, _] : ego_by_id) all_ids.insert(id);
    for (const auto& [id, _] : peers_by_id) all_ids.insert(id);

    std::vector<FusedObject> out;
    for (VehicleId id : all_ids) {
        std::optional<CalibratedDetection> ego;
        if (auto it = ego_by_id.find(id); it != ego_by_id.end()) ego = *it->second;
        std::vector<CalibratedDetection> taken;
        if (auto it = peers_by_id.find(id); it != peers_by_id.end()) {
            for (const auto* pd : it->second) {
                if (!ego) {
                    taken.push_back(*pd);  // ego-unseen: always taken
                    continue;
                }
                bool reduces = pd->u_p < ego->u_p;  // strict
                if (!reduces) continue;
                if (perception_pmi(ego->p_calibrated, pd->p_calibrated) <= 0.0) continue;
                taken.push_back(*pd);
            }
        }
        if (!ego && taken.empty()) continue;  // peer contributions all gated out
        FusedObject f = fuse(ego, taken);
        if (!ego) {
            f.pmi = std::numeric_limits<double>::infinity();
        } else if (!taken.empty()) {
            f.pmi = perception_pmi(ego->p_calibrated, f.p_fused);
        } else {
            f.pmi = 0.0;  // ego-only pass-through
        }
        out.push_back(std::move(f));
    }
    return out;
}

namespace {

// 2-decimal uncertainty with one trailing zero trimmed: 0.24, 0.1, 0.0.
std::string fmt_uncertainty(double u) {
    std::string s = fmt_fixed2(u);
    if (s.size() > 3 && s.back() == '0') s.pop_back();
    return s;
}

int nearest_lane(const std::vector<Lane>& lanes, const Vec2& p) {
    int best_id = -1;
    double best = std::numeric_limits<double>::max();
    for (const auto& lane : lanes) {
        double d = distance_to_polyline(lane.polyline, p);
        if (d < best) {
            best = d;
            best_id = lane.id;
        }
    }
    return best_id;
}

}  // namespace

SemanticMessage format_semantic_message(const std::vector<FusedObject>& fused,
                                        const CavState& ego, const std::vector<Lane>& lanes,
                                        const MessageFormatOptions& opt) {
    double ego_compass = heading_to_compass_deg(ego.heading);
    int ego_lane = lanes.empty() ? -1 : nearest_lane(lanes, ego.position);

    std::ostringstream text;
    text << "Ego Vehicle: Facing " << compass16(ego_compass) << ", Speed: "
         << fmt_sig6(ego.speed());

    nlohmann::ordered_json js;
    js["ego"] = {{"id", ego.id},
                 {"facing", compass16(ego_compass)},
                 {"speed", ego.speed()}};
    js["vehicles"] = nlohmann::ordered_json::array();

    std::vector<FusedObject> ordered = fused;
    std::sort(ordered.begin(), ordered.end(),
              [](const FusedObject& a, const FusedObject& b) { return a.object_id < b.object_id; });

    for (const auto& f : ordered) {
        if (f.object_id == ego.id) continue;
        double dist = (f.location - ego.position).norm();
        double rel = compass_bearing_deg(ego.position, f.location) - ego_compass;
        rel = std::fmod(rel, 360.0);
        if (rel < 0) rel += 360.0;
        const char* rel_tok = compass16(rel);
        const char* facing_tok = compass16(heading_to_compass_deg(f.heading));
        const char* dist_tag = dist < opt.close_threshold_m ? "close" : "far";
        const char* speed_tag = f.speed >= opt.fast_threshold_mps ? "fast" : "slow";
        bool adjacent = false;
        if (!lanes.empty()) {
            int obj_lane = nearest_lane(lanes, f.location);
            adjacent = obj_lane != ego_lane;
        }

        text << "\nVehicle " << f.object_id << " (perception confidence "
             << fmt_fixed2(f.p_fused) << "/uncertainty " << fmt_uncertainty(f.u_fused)
             << "): Relative direction to Ego CAV: " << rel_tok << ", Distance: "
             << fmt_sig6(dist) << " (" << dist_tag << "), Facing " << facing_tok
             << ", Speed: " << speed_tag;
        if (adjacent) text << " - NOTE: This vehicle is in an adjacent lane";

        nlohmann::ordered_json jv;
        jv["id"] = f.object_id;
        jv["p_fused"] = f.p_fused;
        jv["u_fused"] = f.u_fused;
        jv["relative_direction"] = rel_tok;
        jv["distance"] = dist;
        jv["facing"] = facing_tok;
        jv["speed"] = f.speed;
        jv["speed_tag"] = speed_tag;
        jv["adjacent_lane"] = adjacent;
        jv["best_observer"] = f.best_observer;
        js["vehicles"].push_back(std::move(jv));
    }

    return {text.str(), js.dump()};
}

std::string serialize_shared_observations(const std::vector<CalibratedDetection>& dets) {
    std::vector<const CalibratedDetection*> ordered;
    for (const auto& d : dets) ordered.push_back(&d);
    std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
        return a->detection.object_id < b->detection.object_id;
    });
    nlohmann::ordered_json j;
    for (const auto* d : ordered) {
        nlohmann::ordered_json rec;
        rec["angle"] = d->detection.heading;
        rec["extent"] = d->detection.extent;
        rec["location"] = {d->detection.location.x, d->detection.location.y};
        rec["speed"] = d->detection.speed;
        rec["confidence"] = d->detection.max_confidence();  // raw, for audit
        rec["confidence_vector"] = d->detection.confidence_vector;
        rec["class"] = d->predicted_class;
        rec["p_calibrated"] = d->p_calibrated;
        rec["u_p"] = d->u_p;
        j[std::to_string(d->detection.object_id)] = std::move(rec);
    }
    return j.dump();
}

std::vector<CalibratedDetection> deserialize_shared_observations(const std::string& json_text,
                                                                 VehicleId observer_id) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("shared observations: ") + e.what());
    }
    std::vector<CalibratedDetection> out;
    for (const auto& [key, rec] : j.items()) {
        CalibratedDetection cd;
        cd.detection.observer_id = observer_id;
        cd.detection.object_id = std::stoi(key);
        cd.detection.heading = rec.at("angle").get<double>();
        auto e = rec.at("extent");
        cd.detection.extent = {e[0].get<double>(), e[1].get<double>(), e[2].get<double>()};
        cd.detection.location = {rec.at("location")[0].get<double>(),
                                 rec.at("location")[1].get<double>()};
        cd.detection.speed = rec.at("speed").get<double>();
        cd.detection.confidence_vector = rec.at("confidence_vector").get<std::vector<double>>();
        cd.predicted_class = rec.at("class").get<int>();
        cd.c_star = singleton_threshold(cd.detection.confidence_vector);
        cd.p_calibrated = rec.at("p_calibrated").get<double>();
        cd.u_p = rec.at("u_p").get<double>();
        out.push_back(std::move(cd));
    }
    // Key iteration order is parser-defined; restore ascending object id.
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.detection.object_id < b.detection.object_id;
    });
    return out;
}

std::string render_bev_svg(const std::vector<FusedObject>& fused,
                           const std::vector<CavState>& states) {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    bool any = false;
    auto extend = [&](const Vec2& p) {
        if (!any) {
            min_x = max_x = p.x;
            min_y = max_y = p.y;
            any = true;
        } else {
            min_x = std::min(min_x, p.x);
            max_x = std::max(max_x, p.x);
            min_y = std::min(min_y, p.y);
            max_y = std::max(max_y, p.y);
        }
    };
    for (const auto& s : states) extend(s.position);
    for (const auto& f : fused) extend(f.location);
    double pad = 20.0;
    min_x -= pad;
    min_y -= pad;
    max_x += pad;
    max_y += pad;
    if (!any) {
        min_x = min_y = -pad;
        max_x = max_y = pad;
    }
    const double scale = 4.0;
    double w = (max_x - min_x) * scale;
    double h = (max_y - min_y) * scale;
    auto px = [&](double x) { return (x - min_x) * scale; };
    auto py = [&](double y) { return (max_y - y) * scale; };  // North up

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt_sig6(w)
        << "\" height=\"" << fmt_sig6(h) << "\" viewBox=\"0 0 " << fmt_sig6(w) << " "
        << fmt_sig6(h) << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"#202020\"/>\n";

    auto draw_vehicle = [&](VehicleId id, const Vec2& pos, double heading, double half_len,
                            double half_wid, const char* fill, double opacity) {
        double cx = px(pos.x), cy = py(pos.y);
        double deg = -heading * 180.0 / M_PI;  // screen y is flipped
        svg << "<g transform=\"translate(" << fmt_sig6(cx) << "," << fmt_sig6(cy)
            << ") rotate(" << fmt_sig6(deg) << ")\">"
            << "<rect x=\"" << fmt_sig6(-half_len * scale) << "\" y=\""
            << fmt_sig6(-half_wid * scale) << "\" width=\"" << fmt_sig6(2 * half_len * scale)
            << "\" height=\"" << fmt_sig6(2 * half_wid * scale) << "\" fill=\"" << fill
            << "\" fill-opacity=\"" << fmt_sig6(opacity) << "\"/></g>\n";
        svg << "<text x=\"" << fmt_sig6(cx) << "\" y=\"" << fmt_sig6(cy - 6)
            << "\" fill=\"#ffffff\" font-size=\"10\" text-anchor=\"middle\">" << id
            << "</text>\n";
    };

    for (const auto& f : fused)
        draw_vehicle(f.object_id, f.location, f.heading, f.extent[0], f.extent[1], "#ffd24d",
                     std::max(0.2, f.p_fused));
    for (const auto& s : states)
        draw_vehicle(s.id, s.position, s.heading, 2.3, 1.0, "#ff6eb4", 1.0);

    svg << "</svg>\n";
    return svg.str();
}

void render_bev(const std::vector<FusedObject>& fused, const std::vector<CavState>& states,
                const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write SVG file: " + path);
    out << render_bev_svg(fused, states);
}

}  // namespace uncap

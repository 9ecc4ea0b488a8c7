#include "uncap/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "uncap/common.hpp"
#include "uncap/rng.hpp"

namespace uncap {

using nlohmann::ordered_json;

const char* mode_name(SimMode m) {
    switch (m) {
        case SimMode::no_comm: return "no_comm";
        case SimMode::broadcast_all: return "broadcast_all";
        case SimMode::fuse_no_spare: return "fuse_no_spare";
        case SimMode::uncap: return "uncap";
        case SimMode::uncap_images: return "uncap_images";
    }
    return "?";
}

std::optional<SimMode> parse_mode(const std::string& name) {
    for (SimMode m : all_modes())
        if (name == mode_name(m)) return m;
    return std::nullopt;
}

std::vector<SimMode> all_modes() {
    return {SimMode::no_comm, SimMode::broadcast_all, SimMode::fuse_no_spare, SimMode::uncap,
            SimMode::uncap_images};
}

namespace {

bool mode_communicates(SimMode m) { return m != SimMode::no_comm; }

bool mode_uses_spare(SimMode m) {
    return m == SimMode::uncap || m == SimMode::uncap_images;
}

bool mode_uses_fusion(SimMode m) {
    return m == SimMode::fuse_no_spare || m == SimMode::uncap || m == SimMode::uncap_images;
}

Vec2 polyline_point_at(const std::vector<Vec2>& pts, double s) {
    if (pts.empty()) return {};
    double acc = 0.0;
    for (size_t i = 1; i < pts.size(); ++i) {
        double seg = (pts[i] - pts[i - 1]).norm();
        if (acc + seg >= s && seg > 0) {
            double t = (s - acc) / seg;
            return pts[i - 1] + (pts[i] - pts[i - 1]) * t;
        }
        acc += seg;
    }
    return pts.back();
}

FusedObject detection_as_fused(const CalibratedDetection& d) {
    FusedObject f;
    f.object_id = d.detection.object_id;
    f.contributing_observers = {d.detection.observer_id};
    f.p_fused = d.p_calibrated;
    f.u_fused = d.u_p;
    f.best_observer = d.detection.observer_id;
    f.location = d.detection.location;
    f.speed = d.detection.speed;
    f.heading = d.detection.heading;
    f.extent = d.detection.extent;
    f.p_ego = d.p_calibrated;
    return f;
}

FusedObject bare_as_fused(const BarePacket& p) {
    FusedObject f;
    f.object_id = p.sender_id;
    f.contributing_observers = {p.sender_id};
    f.p_fused = 1.0;
    f.u_fused = 0.0;
    f.best_observer = p.sender_id;
    f.location = p.position;
    f.speed = p.velocity.norm();
    f.heading = p.heading;
    f.extent = kCavExtent;
    f.p_ego = 1.0;
    return f;
}

// Vehicle lines only (ego line stripped), for peer message text.
std::string vehicle_lines(const std::vector<FusedObject>& objs, const CavState& ego,
                          const std::vector<Lane>& lanes, const MessageFormatOptions& opt) {
    std::string text = format_semantic_message(objs, ego, lanes, opt).text;
    size_t nl = text.find('\n');
    return nl == std::string::npos ? "" : text.substr(nl + 1);
}

struct SemanticInbox {
    std::vector<CalibratedDetection> detections;
    int generated_tick = 0;
};

double json_pmi(const ordered_json& v) {
    if (v.is_string()) return std::numeric_limits<double>::infinity();
    return v.get<double>();
}

ordered_json pmi_json(double v) {
    if (std::isinf(v)) return "inf";
    return v;
}

ordered_json opt_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

ordered_json nan_json(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

ordered_json plan_decision_json(const PlanDecision& d) {
    return ordered_json{{"action", action_name(d.action)},
                        {"reason", d.reason},
                        {"p", opt_json(d.probability)}};
}

PlanDecision plan_decision_from_json(const ordered_json& j) {
    PlanDecision d;
    auto a = parse_action(j.at("action").get<std::string>());
    if (!a) throw ParseError("unknown action in log");
    d.action = *a;
    d.reason = j.at("reason").get<std::string>();
    if (!j.at("p").is_null()) d.probability = j.at("p").get<double>();
    return d;
}

}  // namespace

std::string EpisodeLog::to_jsonl() const {
    std::ostringstream out;
    ordered_json header{{"schema", "uncap-episode-v1"},
                        {"scenario", scenario_name},
                        {"mode", mode_name(mode)},
                        {"seed", seed},
                        {"tick_rate_hz", tick_rate_hz},
                        {"ego", ego}};
    out << header.dump() << "\n";
    for (const auto& s : states) {
        ordered_json j{{"type", "state"},        {"t", s.tick},
                       {"id", s.id},             {"pos", {s.position.x, s.position.y}},
                       {"vel", {s.velocity.x, s.velocity.y}}, {"heading", s.heading}};
        out << j.dump() << "\n";
    }
    for (const auto& e : envelopes) {
        ordered_json j{{"type", "env"},    {"t", e.tick},          {"from", e.from},
                       {"to", e.to},       {"tier", tier_name(e.tier)}, {"bytes", e.bytes},
                       {"latency_s", e.latency_s}, {"delivered", e.delivered_tick}};
        out << j.dump() << "\n";
    }
    for (const auto& p : pmi) {
        ordered_json j{{"type", "pmi"},  {"t", p.tick},      {"cav", p.cav},
                       {"obj", p.object_id}, {"p_ego", p.p_ego}, {"p_fused", p.p_fused},
                       {"value", pmi_json(p.pmi)}};
        out << j.dump() << "\n";
    }
    for (const auto& p : plans) {
        ordered_json msgs = ordered_json::array();
        for (const auto& m : p.peer_messages)
            msgs.push_back({{"peer", m.peer_id}, {"text", m.text}});
        ordered_json recs = ordered_json::array();
        for (const auto& r : p.peer_records)
            recs.push_back({{"peer", r.peer_id},
                            {"pmi", pmi_json(r.pmi)},
                            {"p_without", r.p_without},
                            {"p_with", r.p_with},
                            {"included", r.included},
                            {"flip", r.plan_flip}});
        ordered_json j{{"type", "plan"},
                       {"t", p.tick},
                       {"cav", p.cav},
                       {"intention", p.intention},
                       {"query", p.query_text},
                       {"peer_messages", msgs},
                       {"decision", plan_decision_json(p.decision)},
                       {"base_decision", plan_decision_json(p.base_decision)},
                       {"included", p.included_peers},
                       {"peer_records", recs},
                       {"p_without_final", nan_json(p.p_without_final)},
                       {"fallback", p.fallback}};
        out << j.dump() << "\n";
    }
    for (const auto& i : infractions) {
        ordered_json j{{"type", "infraction"}, {"t", i.tick},
                       {"cav", i.cav},         {"other", i.other},
                       {"kind", infraction_name(i.kind)}, {"coeff", i.coefficient}};
        out << j.dump() << "\n";
    }
    ordered_json end{{"type", "end"}, {"ticks", ticks_run}, {"terminal", terminal}};
    out << end.dump() << "\n";
    return out.str();
}

EpisodeLog EpisodeLog::from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty episode log");
    ordered_json header;
    try {
        header = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("log header: ") + e.what());
    }
    if (header.value("schema", "") != "uncap-episode-v1")
        throw ParseError("unsupported log schema");

    EpisodeLog log;
    log.scenario_name = header.at("scenario").get<std::string>();
    auto m = parse_mode(header.at("mode").get<std::string>());
    if (!m) throw ParseError("unknown mode in log header");
    log.mode = *m;
    log.seed = header.at("seed").get<uint64_t>();
    log.tick_rate_hz = header.at("tick_rate_hz").get<double>();
    log.ego = header.at("ego").get<int>();

    bool saw_end = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("log record: ") + e.what());
        }
        std::string type = j.at("type").get<std::string>();
        if (type == "state") {
            StateRecord s;
            s.tick = j.at("t").get<int>();
            s.id = j.at("id").get<int>();
            s.position = {j.at("pos")[0].get<double>(), j.at("pos")[1].get<double>()};
            s.velocity = {j.at("vel")[0].get<double>(), j.at("vel")[1].get<double>()};
            s.heading = j.at("heading").get<double>();
            log.states.push_back(s);
        } else if (type == "env") {
            EnvelopeRecord e;
            e.tick = j.at("t").get<int>();
            e.from = j.at("from").get<int>();
            e.to = j.at("to").get<int>();
            auto t = j.at("tier").get<std::string>();
            e.tier = t == "bare" ? Tier::bare : t == "semantic" ? Tier::semantic : Tier::image;
            e.bytes = j.at("bytes").get<long>();
            e.latency_s = j.at("latency_s").get<double>();
            e.delivered_tick = j.at("delivered").get<int>();
            log.envelopes.push_back(e);
        } else if (type == "pmi") {
            PmiRecord p;
            p.tick = j.at("t").get<int>();
            p.cav = j.at("cav").get<int>();
            p.object_id = j.at("obj").get<int>();
            p.p_ego = j.at("p_ego").get<double>();
            p.p_fused = j.at("p_fused").get<double>();
            p.pmi = json_pmi(j.at("value"));
            log.pmi.push_back(p);
        } else if (type == "plan") {
            PlanRecord p;
            p.tick = j.at("t").get<int>();
            p.cav = j.at("cav").get<int>();
            p.intention = j.at("intention").get<std::string>();
            p.query_text = j.at("query").get<std::string>();
            for (const auto& m2 : j.at("peer_messages"))
                p.peer_messages.push_back({m2.at("peer").get<int>(), m2.at("text").get<std::string>()});
            p.decision = plan_decision_from_json(j.at("decision"));
            p.base_decision = plan_decision_from_json(j.at("base_decision"));
            p.included_peers = j.at("included").get<std::vector<int>>();
            for (const auto& r : j.at("peer_records")) {
                PeerPmiRecord rec;
                rec.peer_id = r.at("peer").get<int>();
                rec.pmi = json_pmi(r.at("pmi"));
                rec.p_without = r.at("p_without").get<double>();
                rec.p_with = r.at("p_with").get<double>();
                rec.included = r.at("included").get<bool>();
                rec.plan_flip = r.at("flip").get<bool>();
                p.peer_records.push_back(rec);
            }
            p.p_without_final = j.at("p_without_final").is_null()
                                    ? std::numeric_limits<double>::quiet_NaN()
                                    : j.at("p_without_final").get<double>();
            p.fallback = j.at("fallback").get<bool>();
            log.plans.push_back(std::move(p));
        } else if (type == "infraction") {
            InfractionRecord i;
            i.tick = j.at("t").get<int>();
            i.cav = j.at("cav").get<int>();
            i.other = j.at("other").get<int>();
            auto k = parse_infraction(j.at("kind").get<std::string>());
            if (!k) throw ParseError("unknown infraction kind in log");
            i.kind = *k;
            i.coefficient = j.at("coeff").get<double>();
            log.infractions.push_back(i);
        } else if (type == "end") {
            log.ticks_run = j.at("ticks").get<int>();
            log.terminal = j.at("terminal").get<bool>();
            saw_end = true;
        } else {
            throw ParseError("unknown log record type '" + type + "'");
        }
    }
    if (!saw_end) throw ParseError("truncated log: missing end record");
    return log;
}

EpisodeMetrics compute_metrics(const EpisodeLog& log, const Scenario& scenario) {
    if (log.scenario_name != scenario.name)
        throw InvariantError("log/scenario mismatch: log is for '" + log.scenario_name + "'");
    const CavSpec* ego_spec = scenario.find_cav(log.ego);
    if (!ego_spec) throw InvariantError("log/scenario mismatch: ego not in scenario");

    EpisodeMetrics m;
    double dt = 1.0 / log.tick_rate_hz;

    std::vector<Vec2> ego_traj;
    std::vector<double> ego_speeds;
    std::map<int, std::map<VehicleId, const StateRecord*>> by_tick;
    for (const auto& s : log.states) by_tick[s.tick][s.id] = &s;
    for (const auto& [tick, ids] : by_tick) {
        auto it = ids.find(log.ego);
        if (it == ids.end()) continue;
        ego_traj.push_back(it->second->position);
        ego_speeds.push_back(it->second->velocity.norm());
    }

    int first_failure_tick = -1;
    std::vector<InfractionEvent> ego_events;
    for (const auto& i : log.infractions) {
        if (i.cav != log.ego) continue;
        ego_events.push_back({i.tick, i.kind, i.coefficient});
        if (infraction_is_terminal(i.kind) &&
            (first_failure_tick < 0 || i.tick < first_failure_tick))
            first_failure_tick = i.tick;
    }

    m.rc = route_completion(ego_traj, ego_spec->initial.route, first_failure_tick);
    m.ip = infraction_penalty(ego_events);
    m.ds = driving_score(m.rc, m.ip);

    long total_bytes = 0;
    for (const auto& e : log.envelopes) total_bytes += e.bytes;
    m.tb_kb = total_bytes / 1024.0;

    std::vector<std::pair<double, double>> decision_pairs;
    for (const auto& p : log.plans) {
        if (p.cav != log.ego || p.included_peers.empty()) continue;
        if (std::isnan(p.p_without_final) || !p.decision.probability) continue;
        decision_pairs.emplace_back(p.p_without_final, *p.decision.probability);
    }
    m.ig_decision = information_gain(decision_pairs);

    std::vector<std::pair<double, double>> perception_pairs;
    for (const auto& p : log.pmi) {
        if (p.cav != log.ego || std::isinf(p.pmi)) continue;
        perception_pairs.emplace_back(p.p_ego, p.p_fused);
    }
    m.ig_perception = information_gain(perception_pairs);

    if (scenario.conflict_pair) {
        auto [a, b] = *scenario.conflict_pair;
        auto positions_of = [&](VehicleId id, int tick) -> std::optional<std::pair<Vec2, double>> {
            if (const CavSpec* c = scenario.find_cav(id)) {
                (void)c;
                auto it = by_tick.find(tick);
                if (it == by_tick.end()) return std::nullopt;
                auto jt = it->second.find(id);
                if (jt == it->second.end()) return std::nullopt;
                return std::make_pair(jt->second->position, kCavExtent[1]);
            }
            if (const ObjectTruth* o = scenario.find_object(id))
                return std::make_pair(o->pose_at(tick).location, o->extent[1]);
            return std::nullopt;
        };
        std::vector<Vec2> ta, tb;
        double wa = kCavExtent[1], wb = kCavExtent[1];
        for (const auto& [tick, _] : by_tick) {
            auto pa = positions_of(a, tick);
            auto pb = positions_of(b, tick);
            if (!pa || !pb) continue;
            ta.push_back(pa->first);
            tb.push_back(pb->first);
            wa = pa->second;
            wb = pb->second;
        }
        if (!ta.empty()) m.min_distance_margin_m = min_distance_margin(ta, tb, wa, wb);
    }

    m.jerk_rms = jerk_rms(ego_speeds, dt);
    return m;
}

EpisodeMetrics replay(const EpisodeLog& log, const Scenario& scenario) {
    return compute_metrics(log, scenario);
}

EpisodeMetrics replay_file(const std::string& log_path, const Scenario& scenario) {
    std::ifstream in(log_path);
    if (!in) throw Error("cannot open episode log: " + log_path);
    std::stringstream ss;
    ss << in.rdbuf();
    return replay(EpisodeLog::from_jsonl(ss.str()), scenario);
}

namespace {

// Peer-contributed fused objects for one peer against the ego view.
std::vector<FusedObject> presented_for_peer(const std::vector<CalibratedDetection>& ego_dets,
                                            VehicleId peer,
                                            const std::vector<CalibratedDetection>& peer_dets) {
    std::map<VehicleId, std::vector<CalibratedDetection>> one{{peer, peer_dets}};
    std::vector<FusedObject> fused = select_for_fusion(ego_dets, one);
    std::vector<FusedObject> out;
    for (auto& f : fused) {
        bool from_peer = false;
        for (VehicleId c : f.contributing_observers)
            if (c == peer) from_peer = true;
        if (from_peer && f.pmi > 0.0) out.push_back(std::move(f));
    }
    return out;
}

struct PendingAction {
    int apply_tick = 0;
    VehicleId cav = 0;
    PlanAction action = PlanAction::proceed;
};

}  // namespace

EpisodeResult run_episode(const Scenario& scenario, const SimConfig& config, Planner& planner) {
    if (scenario.duration_ticks <= 0) throw InvariantError("scenario duration_ticks must be > 0");
    double dt = 1.0 / scenario.tick_rate_hz;

    NonconformityModel calibrator =
        config.calibrator_path.empty()
            ? fit_calibrator(synthesize_calibration_set(1000, scenario.sensor, 0xCA11B7A7E))
            : load_calibrator(config.calibrator_path);

    EpisodeLog log;
    log.scenario_name = scenario.name;
    log.mode = config.mode;
    log.seed = config.seed;
    log.tick_rate_hz = scenario.tick_rate_hz;
    log.ego = scenario.ego_id;

    std::map<VehicleId, CavState> states;
    std::map<VehicleId, double> cruise;
    std::map<VehicleId, PlanAction> current_action;
    for (const auto& spec : scenario.cavs) {
        states[spec.initial.id] = spec.initial;
        cruise[spec.initial.id] =
            spec.cruise_speed >= 0 ? spec.cruise_speed : spec.initial.speed();
        current_action[spec.initial.id] = PlanAction::proceed;
    }

    // Inboxes hold the latest delivered item per sender; pending queues are
    // drained in (delivered_tick, sender, receiver) order.
    std::map<VehicleId, std::map<VehicleId, BarePacket>> bare_inbox;
    std::map<VehicleId, std::map<VehicleId, SemanticInbox>> semantic_inbox;
    struct PendingBare {
        int delivered = 0;
        VehicleId from = 0, to = 0;
        BarePacket packet;
    };
    struct PendingSemantic {
        int delivered = 0;
        VehicleId from = 0, to = 0;
        SemanticInbox payload;
    };
    std::vector<PendingBare> pending_bare;
    std::vector<PendingSemantic> pending_semantic;
    std::vector<PendingAction> pending_actions;

    BandwidthLedger ledger;
    Rng drop_rng(mix_seed(config.seed, 0xD60b));
    std::set<std::pair<VehicleId, VehicleId>> collided;
    int action_delay_ticks =
        static_cast<int>(std::ceil(config.planner_latency_s * scenario.tick_rate_hz));

    bool terminal = false;
    int tick = 0;
    for (; tick < scenario.duration_ticks && !terminal; ++tick) {
        // Deliveries due by this tick.
        for (auto& pb : pending_bare)
            if (pb.delivered <= tick && pb.delivered >= 0) {
                bare_inbox[pb.to][pb.from] = pb.packet;
                pb.delivered = -1;
            }
        for (auto& ps : pending_semantic)
            if (ps.delivered <= tick && ps.delivered >= 0) {
                semantic_inbox[ps.to][ps.from] = ps.payload;
                ps.delivered = -1;
            }

        // Log pre-step states.
        for (const auto& [id, st] : states)
            log.states.push_back({tick, id, st.position, st.velocity, st.heading});

        // Stage 0: per-CAV calibrated detections for this tick.
        std::map<VehicleId, std::vector<CalibratedDetection>> calibrated;
        for (const auto& [id, st] : states) {
            std::vector<Detection> dets;
            auto sc = scenario.detections.find(id);
            bool supplied = false;
            if (sc != scenario.detections.end()) {
                auto st2 = sc->second.find(tick);
                if (st2 != sc->second.end()) {
                    dets = st2->second;
                    supplied = true;
                }
            }
            if (!supplied)
                dets = synthesize_detections(scenario.objects, tick, st, scenario.sensor,
                                             mix_seed(config.seed, id, tick));
            std::vector<CalibratedDetection> cds;
            for (const auto& d : dets) cds.push_back(calibrate_detection(calibrator, d));
            calibrated[id] = std::move(cds);
        }

        if (mode_communicates(config.mode)) {
            // Stage 1: BARE broadcast, one envelope per (sender, receiver) link.
            std::map<VehicleId, BarePacket> packets;
            for (const auto& [id, st] : states) packets[id] = make_bare_packet(st);
            for (const auto& [from, pkt] : packets) {
                std::string wire = serialize_bare(pkt);
                for (const auto& [to, _] : states) {
                    if (to == from) continue;
                    MessageEnvelope env{from, {to}, Tier::bare,
                                        static_cast<long>(wire.size()), tick};
                    DeliveryRecord rec = transmit(env, config.channel, scenario.tick_rate_hz);
                    ledger.record(env);
                    log.envelopes.push_back(
                        {tick, from, to, Tier::bare, env.payload_bytes, rec.latency_s,
                         rec.delivered_tick});
                    bool dropped =
                        config.drop_probability > 0 && drop_rng.next_double() < config.drop_probability;
                    if (!dropped)
                        pending_bare.push_back({rec.delivered_tick, from, to, pkt});
                }
            }

            // Stage 2+3: partner selection and semantic transfer toward each ego.
            for (const auto& [ego_id, ego_state] : states) {
                std::vector<BarePacket> known;
                for (const auto& [sender, pkt] : bare_inbox[ego_id]) {
                    (void)sender;
                    known.push_back(pkt);
                }
                std::set<VehicleId> selected;
                if (mode_uses_spare(config.mode)) {
                    selected = spare_select(ego_state, known, config.spare);
                } else {
                    for (const auto& pkt : known) selected.insert(pkt.sender_id);
                }
                for (VehicleId peer : selected) {
                    const auto& peer_dets = calibrated[peer];
                    if (peer_dets.empty()) continue;
                    std::vector<FusedObject> as_fused;
                    for (const auto& d : peer_dets) as_fused.push_back(detection_as_fused(d));
                    std::string text = vehicle_lines(as_fused, ego_state, scenario.lanes,
                                                     config.message_format);
                    ordered_json wire{{"text", text},
                                      {"objects", ordered_json::parse(
                                                      serialize_shared_observations(peer_dets))}};
                    std::string wire_text = wire.dump();
                    MessageEnvelope env{peer, {ego_id}, Tier::semantic,
                                        static_cast<long>(wire_text.size()), tick};
                    DeliveryRecord rec = transmit(env, config.channel, scenario.tick_rate_hz);
                    ledger.record(env);
                    log.envelopes.push_back({tick, peer, ego_id, Tier::semantic,
                                             env.payload_bytes, rec.latency_s,
                                             rec.delivered_tick});
                    bool dropped = config.drop_probability > 0 &&
                                   drop_rng.next_double() < config.drop_probability;
                    if (!dropped)
                        pending_semantic.push_back(
                            {rec.delivered_tick, peer, ego_id, {peer_dets, tick}});

                    if (config.mode == SimMode::uncap_images) {
                        MessageEnvelope img{peer, {ego_id}, Tier::image,
                                            config.image_payload_bytes, tick};
                        DeliveryRecord irec = transmit(img, config.channel, scenario.tick_rate_hz);
                        ledger.record(img);
                        log.envelopes.push_back({tick, peer, ego_id, Tier::image,
                                                 img.payload_bytes, irec.latency_s,
                                                 irec.delivered_tick});
                    }
                }
            }
        }

        // Stage 4: planning at intention-change points.
        for (const auto& spec : scenario.cavs) {
            VehicleId id = spec.initial.id;
            const DecisionPoint* dp = nullptr;
            for (const auto& d : spec.decision_points)
                if (d.tick == tick) dp = &d;
            if (!dp) continue;

            const CavState& ego_state = states[id];
            const auto& ego_dets = calibrated[id];

            // Ego-only knowledge: own detections plus BARE-known CAV states.
            std::vector<FusedObject> base_objs = select_for_fusion(ego_dets, {});
            if (mode_communicates(config.mode))
                for (const auto& [sender, pkt] : bare_inbox[id])
                    base_objs.push_back(bare_as_fused(pkt));
            PlanQuery base;
            base.intention = dp->intention;
            base.ego_semantic_description =
                format_semantic_message(base_objs, ego_state, scenario.lanes,
                                        config.message_format)
                    .text;

            std::vector<PeerMessage> peer_msgs;
            std::map<VehicleId, std::vector<CalibratedDetection>> peer_sets;
            if (mode_communicates(config.mode)) {
                for (const auto& [peer, inbox] : semantic_inbox[id]) {
                    if (inbox.generated_tick < tick - config.message_ttl_ticks) continue;
                    peer_sets[peer] = inbox.detections;
                    std::vector<FusedObject> presented;
                    if (mode_uses_fusion(config.mode)) {
                        presented = presented_for_peer(ego_dets, peer, inbox.detections);
                    } else {
                        for (const auto& d : inbox.detections)
                            presented.push_back(detection_as_fused(d));
                    }
                    if (presented.empty()) continue;
                    peer_msgs.push_back({peer, vehicle_lines(presented, ego_state, scenario.lanes,
                                                             config.message_format)});
                }
            }

            // Object-level perception PMI bookkeeping.
            if (mode_uses_fusion(config.mode) && !peer_sets.empty()) {
                for (const auto& f : select_for_fusion(ego_dets, peer_sets)) {
                    bool peer_contributed = false;
                    for (VehicleId c : f.contributing_observers)
                        if (c != id) peer_contributed = true;
                    if (!peer_contributed) continue;
                    log.pmi.push_back({tick, id, f.object_id, f.p_ego, f.p_fused, f.pmi});
                }
            }

            PlanRecord pr;
            pr.tick = tick;
            pr.cav = id;
            pr.intention = dp->intention;
            pr.query_text = base.ego_semantic_description;
            pr.peer_messages = peer_msgs;

            if (config.mode == SimMode::broadcast_all && !peer_msgs.empty()) {
                // Indiscriminate broadcast: no PMI gate, all messages consumed.
                pr.base_decision = planner.decide(base);
                PlanQuery joint = base;
                std::string fused;
                for (const auto& pm : peer_msgs) {
                    if (!fused.empty()) fused += "\n";
                    fused += pm.text;
                    pr.included_peers.push_back(pm.peer_id);
                }
                joint.fused_message = fused;
                pr.decision = planner.decide(joint);
                pr.p_without_final = planner.score(base, pr.decision.action);
            } else {
                FilterResult fr = filter_peer_messages(base, peer_msgs, planner);
                pr.decision = fr.decision;
                pr.base_decision = fr.base_decision;
                pr.included_peers = fr.included_peers;
                pr.peer_records = fr.records;
                pr.p_without_final = fr.p_without_final;
                pr.fallback = fr.planner_fallback;
            }
            log.plans.push_back(pr);
            pending_actions.push_back({tick + action_delay_ticks, id, pr.decision.action});
        }

        // Apply due actions, then advance kinematics.
        std::sort(pending_actions.begin(), pending_actions.end(),
                  [](const PendingAction& a, const PendingAction& b) {
                      if (a.apply_tick != b.apply_tick) return a.apply_tick < b.apply_tick;
                      return a.cav < b.cav;
                  });
        for (const auto& pa : pending_actions)
            if (pa.apply_tick <= tick) current_action[pa.cav] = pa.action;
        pending_actions.erase(
            std::remove_if(pending_actions.begin(), pending_actions.end(),
                           [&](const PendingAction& a) { return a.apply_tick <= tick; }),
            pending_actions.end());

        for (auto& [id, st] : states) {
            Control ctrl;
            PlanAction act = current_action[id];
            double speed = st.speed();
            double route_len = polyline_length(st.route);
            double s = project_arclength(st.route, st.position);
            bool at_end = s >= route_len - 0.5;
            if (act == PlanAction::no_merge || act == PlanAction::stop || at_end) {
                ctrl.brake = std::clamp(speed / (scenario.kinematics.b_max * dt), 0.0, 1.0);
            } else if (act == PlanAction::yield) {
                ctrl.brake = 0.5;
            } else {  // proceed / merge: pursuit along the route at cruise speed
                double target = cruise[id];
                ctrl.throttle =
                    std::clamp((target - speed) / (scenario.kinematics.a_max * dt), 0.0, 1.0);
                Vec2 look = polyline_point_at(st.route, s + 5.0);
                double desired = std::atan2(look.y - st.position.y, look.x - st.position.x);
                double err = wrap_angle(desired - st.heading);
                double denom = scenario.kinematics.k_steer * dt * std::max(speed, 0.5);
                ctrl.steer = std::clamp(err / denom, -1.0, 1.0);
            }
            st = step_kinematics(st, ctrl, dt, scenario.kinematics);
        }

        // Infractions: overlap tests against objects and other CAVs.
        for (const auto& [id, st] : states) {
            auto check = [&](VehicleId other, const Vec2& pos, double half_w) {
                auto key = std::minmax(id, other);
                if (collided.count({key.first, key.second})) return;
                double margin = (st.position - pos).norm() - (kCavExtent[1] + half_w);
                if (margin > 0) return;
                collided.insert({key.first, key.second});
                double coeff = config.penalties.coefficient(InfractionKind::collision_vehicle);
                log.infractions.push_back(
                    {tick, id, other, InfractionKind::collision_vehicle, coeff});
                if (id == scenario.ego_id) terminal = true;
            };
            for (const auto& obj : scenario.objects)
                check(obj.object_id, obj.pose_at(tick).location, obj.extent[1]);
            for (const auto& [oid, ost] : states) {
                if (oid <= id) continue;
                check(oid, ost.position, kCavExtent[1]);
            }
        }
    }

    log.ticks_run = tick;
    log.terminal = terminal;

    EpisodeResult result;
    result.metrics = compute_metrics(log, scenario);
    result.log = std::move(log);
    return result;
}

std::string SuiteResult::to_csv() const {
    std::ostringstream out;
    out << "mode,scenario,ds,rc,ip,tb_kb,ig_decision,ig_perception,min_margin_m\n";
    auto cell = [](double v) { return std::isnan(v) ? std::string() : fmt_sig6(v); };

    // One row per (mode, scenario), averaged over seeds; NaN entries are
    // excluded from the mean (all-NaN prints empty).
    std::vector<std::pair<SimMode, std::string>> keys;
    for (const auto& r : rows) {
        auto key = std::make_pair(r.mode, r.scenario);
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
    for (const auto& [mode, scenario] : keys) {
        std::array<double, 7> sum{};
        std::array<int, 7> n{};
        for (const auto& r : rows) {
            if (r.mode != mode || r.scenario != scenario) continue;
            std::array<double, 7> v = {r.metrics.ds,          r.metrics.rc,
                                       r.metrics.ip,          r.metrics.tb_kb,
                                       r.metrics.ig_decision, r.metrics.ig_perception,
                                       r.metrics.min_distance_margin_m};
            for (size_t i = 0; i < v.size(); ++i)
                if (!std::isnan(v[i])) sum[i] += v[i], n[i] += 1;
        }
        auto mean = [&](int i) {
            return n[i] == 0 ? std::numeric_limits<double>::quiet_NaN() : sum[i] / n[i];
        };
        out << mode_name(mode) << "," << scenario << "," << cell(mean(0)) << "," << cell(mean(1))
            << "," << cell(mean(2)) << ","
            << (mode == SimMode::no_comm ? std::string() : cell(mean(3))) << "," << cell(mean(4))
            << "," << cell(mean(5)) << "," << cell(mean(6)) << "\n";
    }
    return out.str();
}

SuiteResult run_suite(const std::vector<Scenario>& scenarios, const std::vector<SimMode>& modes,
                      const std::vector<uint64_t>& seeds, const SimConfig& base_config,
                      int jobs) {
    struct Job {
        const Scenario* scenario;
        SimMode mode;
        uint64_t seed;
    };
    std::vector<Job> job_list;
    for (SimMode m : modes)
        for (const auto& sc : scenarios)
            for (uint64_t seed : seeds) job_list.push_back({&sc, m, seed});

    auto run_one = [&](const Job& j) {
        SimConfig cfg = base_config;
        cfg.mode = j.mode;
        cfg.seed = j.seed;
        std::unique_ptr<Planner> planner;
        if (cfg.use_external_planner)
            planner = std::make_unique<LlmPlanner>(cfg.llm);
        else
            planner = std::make_unique<MockPlanner>();
        return run_episode(*j.scenario, cfg, *planner);
    };

    std::vector<EpisodeResult> results(job_list.size());
    if (jobs <= 1) {
        for (size_t i = 0; i < job_list.size(); ++i) results[i] = run_one(job_list[i]);
    } else {
        size_t next = 0;
        std::mutex mu;
        auto worker = [&]() {
            for (;;) {
                size_t i;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= job_list.size()) return;
                    i = next++;
                }
                results[i] = run_one(job_list[i]);
            }
        };
        std::vector<std::thread> threads;
        for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    SuiteResult suite;
    for (size_t i = 0; i < job_list.size(); ++i) {
        suite.rows.push_back({job_list[i].mode, job_list[i].scenario->name, job_list[i].seed,
                              results[i].metrics});
        suite.logs.push_back(std::move(results[i].log));
    }
    return suite;
}

}  // namespace uncap

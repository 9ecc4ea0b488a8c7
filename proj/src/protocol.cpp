#include "uncap/protocol.hpp"

#include <cmath>

#include "json.hpp"
#include "uncap/common.hpp"

namespace uncap {

BarePacket make_bare_packet(const CavState& state) {
    return {state.id, state.position, state.heading, state.velocity};
}

std::string serialize_bare(const BarePacket& p) {
    std::string s = "{\"" + std::to_string(p.sender_id) + "\": {\"position\": [" +
                    fmt_fixed2(p.position.x) + ", " + fmt_fixed2(p.position.y) +
                    "], \"heading\": " + fmt_fixed2(p.heading) + ", \"velocity\": [" +
                    fmt_fixed2(p.velocity.x) + ", " + fmt_fixed2(p.velocity.y) + "]}}";
    if (s.size() > 256) throw InvariantError("bare packet exceeds 256 bytes");
    return s;
}

BarePacket deserialize_bare(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("bare packet: ") + e.what());
    }
    if (j.size() != 1) throw ParseError("bare packet must contain exactly one sender");
    BarePacket p;
    auto it = j.begin();
    p.sender_id = std::stoi(it.key());
    const auto& body = it.value();
    p.position = {body.at("position")[0].get<double>(), body.at("position")[1].get<double>()};
    p.heading = body.at("heading").get<double>();
    p.velocity = {body.at("velocity")[0].get<double>(), body.at("velocity")[1].get<double>()};
    return p;
}

std::set<VehicleId> spare_select(const CavState& ego, const std::vector<BarePacket>& packets,
                                 const SpareConfig& config) {
    if (config.distance_threshold_m <= 0)
        throw InvariantError("distance_threshold_m must be > 0");
    std::set<VehicleId> selected;
    for (const auto& p : packets) {
        if (p.sender_id == ego.id) continue;
        if ((ego.position - p.position).norm() > config.distance_threshold_m) continue;
        double toward_goal = (ego.goal_position - p.position).dot(p.velocity);
        bool heading_ok = config.select_stationary ? toward_goal >= 0.0 : toward_goal > 0.0;
        if (!heading_ok) continue;
        selected.insert(p.sender_id);
    }
    return selected;
}

const char* tier_name(Tier t) {
    switch (t) {
        case Tier::bare: return "bare";
        case Tier::semantic: return "semantic";
        case Tier::image: return "image";
    }
    return "?";
}

DeliveryRecord transmit(const MessageEnvelope& env, const ChannelParams& chan,
                        double tick_rate_hz) {
    double rate = env.tier == Tier::bare ? chan.broadcast_rate_bps : chan.groupcast_rate_bps;
    DeliveryRecord rec;
    rec.latency_s = static_cast<double>(env.payload_bytes) * 8.0 / rate + chan.overhead_s;
    rec.delivered_tick = env.tick_sent + static_cast<int>(std::ceil(rec.latency_s * tick_rate_hz));
    return rec;
}

void BandwidthLedger::record(const MessageEnvelope& env) {
    if (env.payload_bytes <= 0) throw InvariantError("payload_bytes must be > 0");
    per_tier_bytes[env.tier] += env.payload_bytes;
    per_tick_bytes[env.tick_sent] += env.payload_bytes;
    total_bytes += env.payload_bytes;
}

}  // namespace uncap

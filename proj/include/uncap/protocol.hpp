#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "uncap/scenario.hpp"

namespace uncap {

// Minimal state broadcast. Wire form is UTF-8 JSON keyed by sender id, with
// position/heading/velocity at 2-decimal fixed precision, e.g.
//   {"2014": {"position": [-222.67, 240.10], "heading": 0.54, "velocity": [...]}}
struct BarePacket {
    VehicleId sender_id = 0;
    Vec2 position;
    double heading = 0.0;
    Vec2 velocity;

    bool operator==(const BarePacket& o) const = default;
};

BarePacket make_bare_packet(const CavState& state);
std::string serialize_bare(const BarePacket& p);
BarePacket deserialize_bare(const std::string& text);

struct SpareConfig {
    double distance_threshold_m = 50.0;
    // Eq. 3 is a strict inequality; a stationary peer is not selected. This
    // flag widens the test to >= 0 for callers that want stationary peers.
    bool select_stationary = false;
};

// Geometric partner selection: peers within the distance threshold whose
// velocity points toward the ego goal.
std::set<VehicleId> spare_select(const CavState& ego, const std::vector<BarePacket>& packets,
                                 const SpareConfig& config);

enum class Tier { bare, semantic, image };

const char* tier_name(Tier t);

struct MessageEnvelope {
    VehicleId sender_id = 0;
    std::vector<VehicleId> receiver_ids;  // empty = broadcast
    Tier tier = Tier::bare;
    long payload_bytes = 0;  // exact serialized size
    int tick_sent = 0;
};

struct ChannelParams {
    double broadcast_rate_bps = 1'050'000.0;
    double groupcast_rate_bps = 1'520'000.0;
    double overhead_s = 0.010;
};

struct DeliveryRecord {
    double latency_s = 0.0;
    int delivered_tick = 0;
};

// latency = payload_bytes*8/rate + overhead; rate by tier (bare -> broadcast,
// semantic/image -> groupcast). delivered_tick = tick_sent + ceil(latency*rate_hz).
DeliveryRecord transmit(const MessageEnvelope& env, const ChannelParams& chan,
                        double tick_rate_hz);

struct BandwidthLedger {
    std::map<Tier, long> per_tier_bytes;
    std::map<int, long> per_tick_bytes;
    long total_bytes = 0;

    void record(const MessageEnvelope& env);
    double total_kb() const { return total_bytes / 1024.0; }
};

}  // namespace uncap

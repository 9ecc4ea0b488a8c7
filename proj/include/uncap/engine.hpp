#pragma once

#include <memory>
#include <string>
#include <vector>

#include "uncap/calibration.hpp"
#include "uncap/fusion.hpp"
#include "uncap/metrics.hpp"
#include "uncap/planning.hpp"
#include "uncap/protocol.hpp"
#include "uncap/scenario.hpp"

namespace uncap {

enum class SimMode { no_comm, broadcast_all, fuse_no_spare, uncap, uncap_images };

const char* mode_name(SimMode m);
std::optional<SimMode> parse_mode(const std::string& name);
std::vector<SimMode> all_modes();

struct SimConfig {
    SimMode mode = SimMode::uncap;
    SpareConfig spare;
    ChannelParams channel;
    uint64_t seed = 0;
    std::string calibrator_path;  // empty: fit internally (deterministic)
    double planner_latency_s = 1.33;
    // Delivered semantic messages older than this are discarded at planning
    // time; stale observations otherwise pin a peer's last report forever.
    int message_ttl_ticks = 20;
    long image_payload_bytes = 344064;  // per image-tier envelope
    PenaltyTable penalties;
    double drop_probability = 0.0;  // experimental; untested path
    bool use_external_planner = false;
    LlmConfig llm;
    MessageFormatOptions message_format;
};

// CAV body half-extents used for collision/margin tests.
inline constexpr std::array<double, 3> kCavExtent = {2.3, 1.0, 0.9};

struct StateRecord {
    int tick = 0;
    VehicleId id = 0;
    Vec2 position;
    Vec2 velocity;
    double heading = 0.0;
};

struct EnvelopeRecord {
    int tick = 0;
    VehicleId from = 0;
    VehicleId to = 0;
    Tier tier = Tier::bare;
    long bytes = 0;
    double latency_s = 0.0;
    int delivered_tick = 0;
};

struct PmiRecord {
    int tick = 0;
    VehicleId cav = 0;
    VehicleId object_id = 0;
    double p_ego = 0.0;
    double p_fused = 0.0;
    double pmi = 0.0;  // may be +inf (ego-unseen object)
};

struct PlanRecord {
    int tick = 0;
    VehicleId cav = 0;
    std::string intention;
    std::string query_text;  // ego-only semantic description
    std::vector<PeerMessage> peer_messages;
    PlanDecision decision;
    PlanDecision base_decision;
    std::vector<int> included_peers;
    std::vector<PeerPmiRecord> peer_records;
    double p_without_final = std::numeric_limits<double>::quiet_NaN();
    bool fallback = false;
};

struct InfractionRecord {
    int tick = 0;
    VehicleId cav = 0;
    VehicleId other = 0;
    InfractionKind kind = InfractionKind::collision_vehicle;
    double coefficient = 1.0;
};

// Append-only episode record; replayable to identical metrics.
struct EpisodeLog {
    std::string scenario_name;
    SimMode mode = SimMode::uncap;
    uint64_t seed = 0;
    double tick_rate_hz = 10.0;
    VehicleId ego = 0;
    std::vector<StateRecord> states;
    std::vector<EnvelopeRecord> envelopes;
    std::vector<PmiRecord> pmi;
    std::vector<PlanRecord> plans;
    std::vector<InfractionRecord> infractions;
    int ticks_run = 0;
    bool terminal = false;

    std::string to_jsonl() const;
    static EpisodeLog from_jsonl(const std::string& text);
};

// Deterministic metric recomputation from a persisted log.
EpisodeMetrics compute_metrics(const EpisodeLog& log, const Scenario& scenario);

struct EpisodeResult {
    EpisodeLog log;
    EpisodeMetrics metrics;
};

EpisodeResult run_episode(const Scenario& scenario, const SimConfig& config, Planner& planner);

// Recomputes metrics without re-running planners; equals the original exactly.
EpisodeMetrics replay(const EpisodeLog& log, const Scenario& scenario);
EpisodeMetrics replay_file(const std::string& log_path, const Scenario& scenario);

struct SuiteRow {
    SimMode mode = SimMode::uncap;
    std::string scenario;
    uint64_t seed = 0;
    EpisodeMetrics metrics;
};

struct SuiteResult {
    std::vector<SuiteRow> rows;
    std::vector<EpisodeLog> logs;  // aligned with rows

    // CSV columns: mode,scenario,ds,rc,ip,tb_kb,ig_decision,ig_perception,
    // min_margin_m. One row per (mode, scenario) holding the mean over seeds;
    // NaN cells and no-comm bandwidth print empty.
    std::string to_csv() const;
};

SuiteResult run_suite(const std::vector<Scenario>& scenarios, const std::vector<SimMode>& modes,
                      const std::vector<uint64_t>& seeds, const SimConfig& base_config,
                      int jobs = 1);

}  // namespace uncap

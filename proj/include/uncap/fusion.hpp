#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uncap/calibration.hpp"
#include "uncap/scenario.hpp"

namespace uncap {

struct FusedObject {
    VehicleId object_id = 0;
    std::vector<VehicleId> contributing_observers;
    double p_fused = 0.0;
    double u_fused = 1.0;
    VehicleId best_observer = 0;
    // Kinematics adopted from the best (least uncertain) observer's detection.
    Vec2 location;
    double speed = 0.0;
    double heading = 0.0;
    std::array<double, 3> extent = {2.3, 1.0, 0.9};
    // Perception PMI vs the ego-only view; +inf when ego does not observe the
    // object, 0 when no peer contribution was taken.
    double pmi = 0.0;
    double p_ego = 0.0;  // 0 when ego-unseen
};

enum class MatchMode {
    by_object_id,  // simulator mode: ground-truth linkage
    id_free        // greedy nearest-center matching within the gate
};

// Correspondences as (ego index, peer index) pairs; each detection matched at
// most once.
std::vector<std::pair<size_t, size_t>> match_objects(
    const std::vector<CalibratedDetection>& ego_dets,
    const std::vector<CalibratedDetection>& peer_dets, double gate_m,
    MatchMode mode = MatchMode::by_object_id);

// Max-confidence fusion; ties break toward ego, then lowest observer id.
FusedObject fuse(const std::optional<CalibratedDetection>& ego_det,
                 const std::vector<CalibratedDetection>& peer_dets);

// ln(p_fused / p_ego); +inf when p_ego == 0 and p_fused > 0; 0/0 is an error.
double perception_pmi(double p_ego, double p_fused);

// Object-level fusion gate: a peer contribution is taken only when it strictly
// reduces uncertainty and has positive PMI; ego-unseen peer objects are always
// taken (PMI = +inf); unmatched ego objects pass through.
std::vector<FusedObject> select_for_fusion(
    const std::vector<CalibratedDetection>& ego_dets,
    const std::map<VehicleId, std::vector<CalibratedDetection>>& peer_sets);

struct MessageFormatOptions {
    double close_threshold_m = 10.0;
    double fast_threshold_mps = 5.0;
};

struct SemanticMessage {
    std::string text;             // appendix-style planning description
    std::string structured_json;  // same content as JSON
};

// Per-object line: 16-wind relative direction, distance with a close/far tag,
// facing, speed tag, and an adjacent-lane note when the object's nearest lane
// differs from the ego's. Confidences print to 2 decimals.
SemanticMessage format_semantic_message(const std::vector<FusedObject>& fused,
                                        const CavState& ego,
                                        const std::vector<Lane>& lanes = {},
                                        const MessageFormatOptions& opt = {});

// Wire form of a peer's calibrated detections (object-record JSON carrying the
// raw detector confidence alongside the calibrated values).
std::string serialize_shared_observations(const std::vector<CalibratedDetection>& dets);
std::vector<CalibratedDetection> deserialize_shared_observations(const std::string& json_text,
                                                                 VehicleId observer_id);

// Deterministic top-down SVG: CAVs tinted distinctly from regular vehicles,
// labels = ids, opacity proportional to p_fused.
std::string render_bev_svg(const std::vector<FusedObject>& fused,
                           const std::vector<CavState>& states);
void render_bev(const std::vector<FusedObject>& fused, const std::vector<CavState>& states,
                const std::string& path);

}  // namespace uncap

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uncap/common.hpp"

namespace uncap {

enum class PlanAction { merge, no_merge, proceed, stop, yield };

const char* action_name(PlanAction a);
std::optional<PlanAction> parse_action(const std::string& name);

struct PlanQuery {
    std::string ego_semantic_description;
    std::string fused_message;  // peer messages, possibly empty
    std::string intention = "proceed";
    std::vector<std::string> images;  // only in the image-sharing ablation

    std::string combined_text() const {
        return fused_message.empty() ? ego_semantic_description
                                     : ego_semantic_description + "\n" + fused_message;
    }
};

struct PlanDecision {
    PlanAction action = PlanAction::proceed;
    std::string reason;
    // Some planners cannot expose token probabilities; such decisions are
    // excluded from IG metrics.
    std::optional<double> probability;

    std::optional<double> u_d() const;
    bool operator==(const PlanDecision& o) const = default;
};

// u_d = -ln(p); p must be in (0,1].
double decision_uncertainty(double probability);

// ln(p_with / p_without); same edge conventions as perception_pmi.
double plan_pmi(double p_without, double p_with);

class Planner {
public:
    virtual ~Planner() = default;
    virtual PlanDecision decide(const PlanQuery& query) = 0;
    // Likelihood this planner assigns to `action` under `query`.
    virtual double score(const PlanQuery& query, PlanAction action) = 0;
};

struct MockPlannerConfig {
    double base_clearance_m = 10.0;
    double clearance_per_mps = 0.5;  // extra meters per m/s above the pivot
    double clearance_speed_pivot = 5.0;
    double fast_speed_rep_mps = 10.0;  // representative speed for the "fast" tag
    double slow_speed_rep_mps = 3.0;
    double stop_range_m = 30.0;  // proceed intention: hazard radius
    double p_single_rule = 0.95;
    double p_conflict = 0.80;
};

// Deterministic rule cascade over the semantic message text. Total: every
// syntactically valid message yields exactly one action.
class MockPlanner : public Planner {
public:
    explicit MockPlanner(MockPlannerConfig cfg = {}) : cfg_(cfg) {}
    PlanDecision decide(const PlanQuery& query) override;
    double score(const PlanQuery& query, PlanAction action) override;

private:
    MockPlannerConfig cfg_;
};

struct PeerMessage {
    int peer_id = 0;
    std::string text;
};

struct PeerPmiRecord {
    int peer_id = 0;
    double pmi = 0.0;
    double p_without = 0.0;
    double p_with = 0.0;
    bool included = false;
    bool plan_flip = false;  // with-peer plan differed from the base plan
};

struct FilterResult {
    PlanDecision decision;
    PlanDecision base_decision;  // ego-only
    std::vector<int> included_peers;
    std::vector<PeerPmiRecord> records;
    // p the base query assigns to the final decision's action; NaN when the
    // planner exposes no probability.
    double p_without_final = 0.0;
    bool planner_fallback = false;
};

// Per-peer plan-PMI gate: the with-peer plan is held fixed and scored under
// both observation sets; a peer is included iff its PMI is strictly positive.
// The final decision uses all included peers jointly. Planner failure falls
// back to the ego-only decision.
FilterResult filter_peer_messages(const PlanQuery& base_query,
                                  const std::vector<PeerMessage>& peer_messages,
                                  Planner& planner);

// Appendix-style prompt templates; byte-stable for fixed inputs.
std::string build_perception_prompt(int ego_id, const std::string& intention);
std::string build_planning_prompt(const std::string& ego_description);

// ---- external (OpenAI-compatible) planner client ----

struct LlmConfig {
    std::string base_url;  // e.g. http://127.0.0.1:8080
    std::string model = "gpt-4o";
    std::string api_key;  // from UNCAP_API_KEY when empty
    int max_retries = 2;
    double timeout_s = 30.0;
};

// Parses a chat-completions response body: "action:" / "reason:" lines in the
// message content; probability = exp(sum of log-probs of the tokens composing
// the action value).
PlanDecision parse_llm_response(const std::string& response_body);

// Sends the planning prompt with the semantic description substituted and
// requests token log-probabilities. Retries <= max_retries with backoff.
PlanDecision llm_plan(const PlanQuery& query, const LlmConfig& config);

class LlmPlanner : public Planner {
public:
    explicit LlmPlanner(LlmConfig cfg) : cfg_(std::move(cfg)) {}
    PlanDecision decide(const PlanQuery& query) override { return llm_plan(query, cfg_); }
    // A remote planner cannot be re-queried for an arbitrary action's
    // likelihood; the complement estimate mirrors MockPlanner::score.
    double score(const PlanQuery& query, PlanAction action) override;

private:
    LlmConfig cfg_;
};

}  // namespace uncap

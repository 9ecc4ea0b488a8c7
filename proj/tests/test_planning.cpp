#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "uncap/planning.hpp"
#include "uncap/rng.hpp"

using namespace uncap;

namespace {

// Builds one vehicle line in the exact semantic-message layout.
std::string vehicle_line(int id, const std::string& rel, double dist, const std::string& facing,
                         const std::string& speed_tag, bool adjacent) {
    std::string s = "Vehicle " + std::to_string(id) +
                    " (perception confidence 0.95/uncertainty 0.05): "
                    "Relative direction to Ego CAV: " +
                    rel + ", Distance: " + fmt_sig6(dist) + " (" +
                    (dist < 10.0 ? "close" : "far") + "), Facing " + facing +
                    ", Speed: " + speed_tag;
    if (adjacent) s += " - NOTE: This vehicle is in an adjacent lane";
    return s;
}

PlanQuery merge_query(const std::vector<std::string>& lines) {
    PlanQuery q;
    q.intention = "merge";
    q.ego_semantic_description = "Ego Vehicle: Facing N, Speed: 8";
    for (const auto& l : lines) q.ego_semantic_description += "\n" + l;
    return q;
}

}  // namespace

TEST_CASE("decision uncertainty is the negative log-likelihood") {
    CHECK(decision_uncertainty(1.0) == 0.0);
    CHECK(decision_uncertainty(0.992902) == doctest::Approx(0.0071233).epsilon(1e-4));
    CHECK(decision_uncertainty(1.0 / std::exp(1.0)) == doctest::Approx(1.0));
    CHECK_THROWS_AS(decision_uncertainty(0.0), InvariantError);
    CHECK_THROWS_AS(decision_uncertainty(-0.5), InvariantError);
    CHECK_THROWS_AS(decision_uncertainty(1.5), InvariantError);
}

TEST_CASE("plan PMI: documented values and edge conventions") {
    CHECK(plan_pmi(0.43, 0.78) == doctest::Approx(0.5956).epsilon(1e-3));
    CHECK(plan_pmi(0.43, 0.48) == doctest::Approx(0.1100).epsilon(1e-2));
    CHECK(plan_pmi(0.8, 0.8) == 0.0);
    CHECK(std::isinf(plan_pmi(0.0, 0.5)));
    CHECK_THROWS_AS(plan_pmi(0.0, 0.0), InvariantError);
}

TEST_CASE("action names round-trip; parsing is case-insensitive") {
    for (PlanAction a : {PlanAction::merge, PlanAction::no_merge, PlanAction::proceed,
                         PlanAction::stop, PlanAction::yield})
        CHECK(parse_action(action_name(a)) == a);
    CHECK(parse_action("No Merge") == PlanAction::no_merge);
    CHECK(parse_action("no_merge") == PlanAction::no_merge);
    CHECK(!parse_action("swerve").has_value());
}

TEST_CASE("mock planner: empty scene means no merge") {
    MockPlanner planner;
    PlanDecision d = planner.decide(merge_query({}));
    CHECK(d.action == PlanAction::no_merge);
    CHECK(d.probability == doctest::Approx(0.95));
}

TEST_CASE("mock planner: close adjacent-lane vehicle blocks the merge") {
    MockPlanner planner;
    PlanDecision d = planner.decide(
        merge_query({vehicle_line(2014, "ESE", 6.37, "N", "slow", true)}));
    CHECK(d.action == PlanAction::no_merge);
    CHECK(d.probability == doctest::Approx(0.95));
}

TEST_CASE("mock planner: adjacent-lane vehicle behind with clearance supports the merge") {
    MockPlanner planner;
    PlanDecision d = planner.decide(
        merge_query({vehicle_line(2014, "S", 18.8, "N", "slow", true)}));
    CHECK(d.action == PlanAction::merge);
    CHECK(d.probability == doctest::Approx(0.95));
}

TEST_CASE("mock planner: oncoming adjacent-lane vehicle ahead blocks regardless of distance") {
    MockPlanner planner;
    PlanDecision d = planner.decide(
        merge_query({vehicle_line(2042, "N", 45.0, "S", "fast", true)}));
    CHECK(d.action == PlanAction::no_merge);
}

TEST_CASE("mock planner: speed widens the required clearance") {
    MockPlanner planner;
    // Fast vehicle (representative 10 m/s): required = 10 + 0.5*(10-5) = 12.5 m.
    PlanDecision fast = planner.decide(
        merge_query({vehicle_line(2014, "S", 11.0, "N", "fast", true)}));
    CHECK(fast.action == PlanAction::no_merge);
    // Slow vehicle at the same distance clears the 10 m floor.
    PlanDecision slow = planner.decide(
        merge_query({vehicle_line(2014, "S", 11.0, "N", "slow", true)}));
    CHECK(slow.action == PlanAction::merge);
}

TEST_CASE("mock planner: conflicting rules lower the confidence to 0.80") {
    MockPlanner planner;
    PlanDecision d = planner.decide(
        merge_query({vehicle_line(2014, "S", 18.8, "N", "slow", true),
                     vehicle_line(2042, "N", 45.0, "S", "fast", true)}));
    CHECK(d.action == PlanAction::no_merge);  // the conservative branch wins
    CHECK(d.probability == doctest::Approx(0.80));
}

TEST_CASE("mock planner: proceed intention stops only for crossing hazards ahead") {
    MockPlanner planner;
    PlanQuery q;
    q.intention = "proceed";
    q.ego_semantic_description = "Ego Vehicle: Facing E, Speed: 5";

    // Crossing vehicle ahead inside the hazard radius: stop.
    q.ego_semantic_description += "\n" + vehicle_line(7001, "NE", 25.0, "S", "slow", false);
    PlanDecision d = planner.decide(q);
    CHECK(d.action == PlanAction::stop);
    CHECK(d.probability == doctest::Approx(0.95));

    // Same-direction vehicle ahead: proceed.
    PlanQuery q2;
    q2.intention = "proceed";
    q2.ego_semantic_description = "Ego Vehicle: Facing E, Speed: 5\n" +
                                  vehicle_line(7001, "NE", 25.0, "E", "slow", false);
    CHECK(planner.decide(q2).action == PlanAction::proceed);

    // Crossing vehicle beyond the hazard radius: proceed.
    PlanQuery q3;
    q3.intention = "proceed";
    q3.ego_semantic_description = "Ego Vehicle: Facing E, Speed: 5\n" +
                                  vehicle_line(7001, "NE", 45.0, "S", "slow", false);
    CHECK(planner.decide(q3).action == PlanAction::proceed);
}

TEST_CASE("mock planner is total: every syntactically valid message yields one action") {
    MockPlanner planner;
    Rng rng(31);
    const char* winds[] = {"N", "NNE", "NE", "ENE", "E", "ESE", "SE", "SSE",
                           "S", "SSW", "SW", "WSW", "W", "WNW", "NW", "NNW"};
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<std::string> lines;
        int n = static_cast<int>(rng.next_u64() % 5);
        for (int i = 0; i < n; ++i)
            lines.push_back(vehicle_line(100 + i, winds[rng.next_u64() % 16],
                                         rng.uniform(0.5, 80.0), winds[rng.next_u64() % 16],
                                         rng.next_double() < 0.5 ? "fast" : "slow",
                                         rng.next_double() < 0.5));
        PlanQuery q = merge_query(lines);
        if (trial % 2) q.intention = "proceed";
        PlanDecision d = planner.decide(q);
        REQUIRE(d.probability.has_value());
        CHECK(*d.probability > 0.0);
        CHECK(*d.probability <= 1.0);
        // score() is consistent with decide().
        CHECK(planner.score(q, d.action) == doctest::Approx(*d.probability));
    }
}

TEST_CASE("peer filter includes exactly the peers with positive plan PMI") {
    MockPlanner planner;
    PlanQuery base = merge_query({});  // ego-only: no_merge @ 0.95

    // A peer revealing a supporting vehicle flips the plan; PMI = ln(0.95/0.05) > 0.
    PeerMessage helpful{9001, vehicle_line(2014, "S", 18.8, "N", "slow", true)};
    FilterResult fr = filter_peer_messages(base, {helpful}, planner);
    CHECK(fr.base_decision.action == PlanAction::no_merge);
    CHECK(fr.decision.action == PlanAction::merge);
    CHECK(fr.included_peers == std::vector<int>{9001});
    REQUIRE(fr.records.size() == 1);
    CHECK(fr.records[0].pmi == doctest::Approx(std::log(0.95 / 0.05)));
    CHECK(fr.records[0].plan_flip);
    CHECK(fr.p_without_final == doctest::Approx(0.05));

    // A peer that does not change the decision has PMI 0 and is excluded.
    PeerMessage redundant{9002, vehicle_line(2042, "N", 45.0, "S", "fast", true)};
    fr = filter_peer_messages(base, {redundant}, planner);
    CHECK(fr.included_peers.empty());
    REQUIRE(fr.records.size() == 1);
    CHECK(fr.records[0].pmi == doctest::Approx(0.0));
    // All peers excluded: the decision equals the ego-only decision exactly.
    CHECK(fr.decision == fr.base_decision);
}

namespace {

// Planner that fails whenever peer content is present.
struct FragilePlanner : Planner {
    MockPlanner inner;
    PlanDecision decide(const PlanQuery& q) override {
        if (!q.fused_message.empty()) throw NetworkError("simulated outage");
        return inner.decide(q);
    }
    double score(const PlanQuery& q, PlanAction a) override { return inner.score(q, a); }
};

}  // namespace

TEST_CASE("peer filter degrades to the ego-only decision on planner failure") {
    FragilePlanner planner;
    PlanQuery base = merge_query({});
    PeerMessage peer{9001, vehicle_line(2014, "S", 18.8, "N", "slow", true)};
    FilterResult fr = filter_peer_messages(base, {peer}, planner);
    CHECK(fr.planner_fallback);
    CHECK(fr.decision == fr.base_decision);
    CHECK(fr.included_peers.empty());
}

TEST_CASE("planner response parsing: documented format and probability") {
    nlohmann::ordered_json body;
    std::string content = "action: no merge\nreason: vehicle too close";
    body["choices"] = {{{"message", {{"role", "assistant"}, {"content", content}}},
                        {"logprobs",
                         {{"content",
                           {{{"token", "action"}, {"logprob", -0.001}},
                            {{"token", ":"}, {"logprob", -0.001}},
                            {{"token", " no"}, {"logprob", -0.05}},
                            {{"token", " merge"}, {"logprob", -0.02}},
                            {{"token", "\nreason"}, {"logprob", -0.001}},
                            {{"token", ": vehicle too close"}, {"logprob", -0.3}}}}}}}};
    PlanDecision d = parse_llm_response(body.dump());
    CHECK(d.action == PlanAction::no_merge);
    CHECK(d.reason == "vehicle too close");
    REQUIRE(d.probability.has_value());
    CHECK(*d.probability == doctest::Approx(std::exp(-0.07)).epsilon(1e-12));
    // Replaying the recorded response reproduces the decision exactly.
    PlanDecision again = parse_llm_response(body.dump());
    CHECK(again == d);
}

TEST_CASE("planner response parsing: explicit probability line fallback") {
    nlohmann::ordered_json body;
    body["choices"] = {{{"message",
                         {{"content", "action: merge\nreason: clear\nProbability: 0.992902"}}}}};
    PlanDecision d = parse_llm_response(body.dump());
    CHECK(d.action == PlanAction::merge);
    REQUIRE(d.probability.has_value());
    CHECK(*d.probability == doctest::Approx(0.992902));
}

TEST_CASE("planner response parsing: malformed inputs raise typed errors") {
    CHECK_THROWS_AS(parse_llm_response("not json"), FormatError);
    CHECK_THROWS_AS(parse_llm_response(R"({"choices": []})"), FormatError);
    nlohmann::ordered_json body;
    body["choices"] = {{{"message", {{"content", "I refuse to answer."}}}}};
    CHECK_THROWS_AS(parse_llm_response(body.dump()), FormatError);
    body["choices"] = {{{"message", {{"content", "action: swerve"}}}}};
    CHECK_THROWS_AS(parse_llm_response(body.dump()), FormatError);
}

TEST_CASE("prompt templates carry the documented anchors") {
    std::string perception = build_perception_prompt(1996, "wants to merge into the right lane");
    CHECK(perception.find("the Ego CAV. It currently") != std::string::npos);
    CHECK(perception.find("1996") != std::string::npos);
    CHECK(perception.find("wants to merge into the right lane") != std::string::npos);

    std::string planning = build_planning_prompt("Ego Vehicle: Facing N, Speed: 8");
    CHECK(planning.find("action: [merge|no merge]") != std::string::npos);
    CHECK(planning.find("Ego Vehicle: Facing N, Speed: 8") != std::string::npos);
    // Empty description still yields a well-formed prompt around the empty slot.
    std::string empty_desc = build_planning_prompt("");
    CHECK(empty_desc.find("action: [merge|no merge]") != std::string::npos);
}

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "uncap/planning.hpp"

namespace uncap {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(const std::string& s) {
    std::string out;
    for (char c : s) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Locate "<label>" at a line start (case-insensitive) and return the character
// range of the value on that line.
bool find_labeled_value(const std::string& content, const std::string& label, size_t& value_begin,
                        size_t& value_end) {
    std::string lc = lower(content);
    size_t pos = 0;
    while (pos != std::string::npos) {
        size_t hit = lc.find(label, pos);
        if (hit == std::string::npos) return false;
        if (hit == 0 || lc[hit - 1] == '\n') {
            size_t line_end = content.find('\n', hit);
            if (line_end == std::string::npos) line_end = content.size();
            value_begin = hit + label.size();
            while (value_begin < line_end && content[value_begin] == ' ') ++value_begin;
            value_end = line_end;
            while (value_end > value_begin &&
                   (content[value_end - 1] == ' ' || content[value_end - 1] == '\r'))
                --value_end;
            return true;
        }
        pos = hit + 1;
    }
    return false;
}

}  // namespace

PlanDecision parse_llm_response(const std::string& response_body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(response_body);
    } catch (const nlohmann::json::parse_error&) {
        throw FormatError("planner response is not valid JSON", response_body);
    }
    if (!j.contains("choices") || j["choices"].empty())
        throw FormatError("planner response has no choices", response_body);
    const auto& choice = j["choices"][0];
    std::string content = choice.at("message").at("content").get<std::string>();

    size_t ab, ae;
    if (!find_labeled_value(content, "action:", ab, ae))
        throw FormatError("planner response missing 'action:' line", content);
    std::string action_text = trim(content.substr(ab, ae - ab));
    auto action = parse_action(action_text);
    if (!action) throw FormatError("unrecognized action '" + action_text + "'", content);

    PlanDecision d;
    d.action = *action;
    size_t rb, re;
    if (find_labeled_value(content, "reason:", rb, re))
        d.reason = trim(content.substr(rb, re - rb));

    // Probability = exp(sum of log-probs of the tokens that compose the action
    // value); falls back to an explicit "Probability:" line, else unset.
    if (choice.contains("logprobs") && choice["logprobs"].contains("content")) {
        double sum = 0.0;
        bool any = false;
        size_t offset = 0;
        for (const auto& tok : choice["logprobs"]["content"]) {
            std::string t = tok.at("token").get<std::string>();
            size_t tok_begin = offset;
            size_t tok_end = offset + t.size();
            offset = tok_end;
            if (tok_end <= ab || tok_begin >= ae) continue;
            sum += tok.at("logprob").get<double>();
            any = true;
        }
        if (any) d.probability = std::exp(sum);
    }
    if (!d.probability) {
        size_t pb, pe;
        if (find_labeled_value(content, "probability:", pb, pe)) {
            try {
                d.probability = std::stod(content.substr(pb, pe - pb));
            } catch (...) {
                throw FormatError("unparseable 'Probability:' value", content);
            }
        }
    }
    return d;
}

PlanDecision llm_plan(const PlanQuery& query, const LlmConfig& config) {
    std::string api_key = config.api_key;
    if (api_key.empty()) {
        const char* env = std::getenv("UNCAP_API_KEY");
        if (env) api_key = env;
    }
    std::string base_url = config.base_url;
    if (base_url.empty()) {
        const char* env = std::getenv("UNCAP_BASE_URL");
        base_url = env ? env : "https://api.openai.com";
    }

    std::string description = query.combined_text();
    nlohmann::ordered_json body;
    body["model"] = config.model;
    body["messages"] = nlohmann::ordered_json::array(
        {{{"role", "user"}, {"content", build_planning_prompt(description)}}});
    body["logprobs"] = true;

    httplib::Client cli(base_url);
    cli.set_connection_timeout(std::chrono::milliseconds(
        static_cast<int>(config.timeout_s * 1000)));
    cli.set_read_timeout(std::chrono::milliseconds(static_cast<int>(config.timeout_s * 1000)));
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

    std::string last_error;
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(100 * (1 << attempt)));
        auto res = cli.Post("/v1/chat/completions", headers, body.dump(), "application/json");
        if (!res) {
            last_error = "connection failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 401 || res->status == 403)
            throw AuthError("planner endpoint rejected credentials (HTTP " +
                            std::to_string(res->status) + ")");
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        return parse_llm_response(res->body);
    }
    throw NetworkError("planner endpoint unreachable after retries: " + last_error);
}

}  // namespace uncap

#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kernelblaze/errors.hpp"
#include "kernelblaze/knowledge_base.hpp"
#include "kernelblaze/profile.hpp"
#include "kernelblaze/prompt_templates.hpp"
#include "kernelblaze/state_engine.hpp"
#include "kernelblaze/util.hpp"

namespace kblaze {

enum class AgentRole {
    StateExtractor,
    OptimizationProposer,
    Lowering,
    PolicyEvaluationSummarizer,
    PerfGapAnalysis,
    ParameterUpdateRewriter,
    SoftVerifier,
};

inline constexpr std::array<AgentRole, 7> kAllAgentRoles = {
    AgentRole::StateExtractor,        AgentRole::OptimizationProposer,
    AgentRole::Lowering,              AgentRole::PolicyEvaluationSummarizer,
    AgentRole::PerfGapAnalysis,       AgentRole::ParameterUpdateRewriter,
    AgentRole::SoftVerifier,
};

inline std::string_view role_id(AgentRole role) {
    switch (role) {
        case AgentRole::StateExtractor: return "state_extractor";
        case AgentRole::OptimizationProposer: return "optimization_proposer";
        case AgentRole::Lowering: return "lowering";
        case AgentRole::PolicyEvaluationSummarizer: return "policy_evaluation_summarizer";
        case AgentRole::PerfGapAnalysis: return "perf_gap_analysis";
        case AgentRole::ParameterUpdateRewriter: return "parameter_update_rewriter";
        case AgentRole::SoftVerifier: return "soft_verifier";
    }
    return "unknown";
}

inline std::optional<AgentRole> role_from_id(std::string_view id) {
    for (AgentRole role : kAllAgentRoles)
        if (role_id(role) == id) return role;
    return std::nullopt;
}

struct AgentRequest {
    AgentRole role = AgentRole::Lowering;
    std::string rendered_prompt;
    std::string response_schema_id;
    double temperature = 0.2;
    int max_tokens = 4096;
};

struct AgentResponse {
    std::string text;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::int64_t latency_ms = 0;
};

/// Running token totals per role; rollouts carry one and merge it upward.
struct TokenCounter {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> per_role;

    void add(AgentRole role, const AgentResponse& response) {
        prompt_tokens += response.prompt_tokens;
        completion_tokens += response.completion_tokens;
        auto& slot = per_role[std::string(role_id(role))];
        slot.first += response.prompt_tokens;
        slot.second += response.completion_tokens;
    }
    void merge(const TokenCounter& other) {
        prompt_tokens += other.prompt_tokens;
        completion_tokens += other.completion_tokens;
        for (const auto& [role, counts] : other.per_role) {
            auto& slot = per_role[role];
            slot.first += counts.first;
            slot.second += counts.second;
        }
    }
};

// ---------------------------------------------------------------------------
// Prompt rendering

inline std::string_view prompt_template(AgentRole role) {
    switch (role) {
        case AgentRole::StateExtractor: return prompts::kStateExtractor;
        case AgentRole::OptimizationProposer: return prompts::kOptimizationProposer;
        case AgentRole::Lowering: return prompts::kLowering;
        case AgentRole::PolicyEvaluationSummarizer: return prompts::kPolicyEvaluationSummarizer;
        case AgentRole::PerfGapAnalysis: return prompts::kPerfGapAnalysis;
        case AgentRole::ParameterUpdateRewriter: return prompts::kParameterUpdateRewriter;
        case AgentRole::SoftVerifier: return prompts::kSoftVerifier;
    }
    return "";
}

/// Deterministic placeholder substitution. A placeholder is "{key}" where
/// key is a lowercase identifier; every placeholder in the template must be
/// present in the context. Other brace uses (e.g. JSON examples) pass
/// through untouched.
inline std::string render_prompt(AgentRole role, const std::map<std::string, std::string>& context) {
    const std::string_view tmpl = prompt_template(role);
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] != '{') {
            out.push_back(tmpl[i++]);
            continue;
        }
        std::size_t j = i + 1;
        while (j < tmpl.size() &&
               ((tmpl[j] >= 'a' && tmpl[j] <= 'z') || tmpl[j] == '_' ||
                (tmpl[j] >= '0' && tmpl[j] <= '9')))
            ++j;
        if (j > i + 1 && j < tmpl.size() && tmpl[j] == '}') {
            const std::string key(tmpl.substr(i + 1, j - i - 1));
            auto it = context.find(key);
            if (it == context.end()) throw Error(ErrorCode::MissingPlaceholder, key);
            out += it->second;
            i = j + 1;
        } else {
            out.push_back(tmpl[i++]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Agent interface

class Agent {
public:
    virtual ~Agent() = default;
    virtual AgentResponse complete(const AgentRequest& request) = 0;
    /// Mock transports replay strictly in call order, so runs that use them
    /// must schedule rollouts sequentially for reproducibility.
    virtual bool sequential_only() const { return false; }

protected:
    static void validate_request(const AgentRequest& request) {
        if (request.rendered_prompt.empty())
            throw Error(ErrorCode::InvalidSpec, "rendered_prompt must be non-empty");
        if (request.temperature < 0.0 || request.temperature > 2.0)
            throw Error(ErrorCode::InvalidSpec, "temperature must be in [0, 2]");
    }
};

// ---------------------------------------------------------------------------
// Scriptable deterministic mock

/// Replays scripted responses keyed by (role, call_index). With cycle mode
/// the per-role script repeats, which keeps long runs scriptable with a
/// handful of responses.
class MockAgent final : public Agent {
public:
    struct Scripted {
        std::string text;
        std::int64_t prompt_tokens = 0;
        std::int64_t completion_tokens = 0;
    };

    MockAgent() = default;
    MockAgent(MockAgent&& other) noexcept
        : scripts_(std::move(other.scripts_)),
          call_index_(std::move(other.call_index_)),
          cycle_(other.cycle_) {}
    MockAgent& operator=(MockAgent&& other) noexcept {
        scripts_ = std::move(other.scripts_);
        call_index_ = std::move(other.call_index_);
        cycle_ = other.cycle_;
        return *this;
    }

    static MockAgent from_json_string(const std::string& text) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorCode::MalformedFile, std::string("mock script: ") + e.what());
        }
        MockAgent agent;
        const nlohmann::json* responses = &doc;
        if (doc.is_object()) {
            agent.cycle_ = doc.value("cycle", false);
            if (!doc.contains("responses") || !doc.at("responses").is_array())
                throw Error(ErrorCode::MalformedFile, "mock script: missing responses array");
            responses = &doc.at("responses");
        } else if (!doc.is_array()) {
            throw Error(ErrorCode::MalformedFile, "mock script: expected array or object");
        }
        std::size_t index = 0;
        for (const auto& item : *responses) {
            const std::string locus = "mock script [" + std::to_string(index++) + "]";
            if (!item.is_object()) throw Error(ErrorCode::MalformedFile, locus + ": not an object");
            const std::string id = item.value("role_id", "");
            auto role = role_from_id(id);
            if (!role) throw Error(ErrorCode::MalformedFile, locus + ": unknown role_id '" + id + "'");
            Scripted s;
            s.text = item.value("text", "");
            s.prompt_tokens = item.value("prompt_tokens", std::int64_t{0});
            s.completion_tokens = item.value("completion_tokens", std::int64_t{0});
            agent.scripts_[*role].push_back(std::move(s));
        }
        return agent;
    }

    static MockAgent from_file(const std::string& path) {
        return from_json_string(read_file(path));
    }

    void push(AgentRole role, Scripted response) { scripts_[role].push_back(std::move(response)); }
    void set_cycle(bool cycle) { cycle_ = cycle; }

    AgentResponse complete(const AgentRequest& request) override {
        validate_request(request);
        std::lock_guard<std::mutex> lock(mutex_);
        auto& index = call_index_[request.role];
        auto it = scripts_.find(request.role);
        if (it == scripts_.end() || it->second.empty() ||
            (!cycle_ && index >= it->second.size()))
            throw Error(ErrorCode::ScriptExhausted,
                        std::string(role_id(request.role)) + " call " + std::to_string(index));
        const Scripted& s = it->second[cycle_ ? index % it->second.size() : index];
        ++index;
        return {s.text, s.prompt_tokens, s.completion_tokens, 0};
    }

    bool sequential_only() const override { return true; }

    std::size_t calls_made(AgentRole role) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = call_index_.find(role);
        return it == call_index_.end() ? 0 : it->second;
    }

private:
    std::map<AgentRole, std::vector<Scripted>> scripts_;
    std::map<AgentRole, std::size_t> call_index_;
    bool cycle_ = false;
    mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Structured response parsing

namespace detail {

inline std::optional<std::string> first_fenced_block(const std::string& text) {
    std::size_t open = text.find("```");
    if (open == std::string::npos) return std::nullopt;
    std::size_t body = text.find('\n', open);
    if (body == std::string::npos) return std::nullopt;
    ++body;
    std::size_t close = text.find("```", body);
    if (close == std::string::npos) return std::nullopt;
    return text.substr(body, close - body);
}

/// Extracts the first balanced JSON value starting at '{' or '['.
inline std::optional<std::string> first_json_document(const std::string& text) {
    for (std::size_t start = 0; start < text.size(); ++start) {
        const char open = text[start];
        if (open != '{' && open != '[') continue;
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped)
                    escaped = false;
                else if (c == '\\')
                    escaped = true;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"')
                in_string = true;
            else if (c == '{' || c == '[')
                ++depth;
            else if (c == '}' || c == ']') {
                --depth;
                if (depth == 0) return text.substr(start, i - start + 1);
            }
        }
    }
    return std::nullopt;
}

} // namespace detail

/// Extracts the first well-formed JSON document from a response, preferring
/// a fenced block; trailing prose is ignored.
inline nlohmann::json parse_first_json(const std::string& text) {
    if (auto block = detail::first_fenced_block(text)) {
        if (auto doc = detail::first_json_document(*block)) {
            auto parsed = nlohmann::json::parse(*doc, nullptr, false);
            if (!parsed.is_discarded()) return parsed;
        }
    }
    if (auto doc = detail::first_json_document(text)) {
        auto parsed = nlohmann::json::parse(*doc, nullptr, false);
        if (!parsed.is_discarded()) return parsed;
    }
    throw Error(ErrorCode::ParseFailure, "no JSON document found in response");
}

inline std::string parse_code_block(const std::string& text) {
    if (auto block = detail::first_fenced_block(text)) return *block;
    throw Error(ErrorCode::ParseFailure, "no fenced code block in response");
}

inline PerformanceSignature parse_signature(const std::string& text) {
    nlohmann::json doc = parse_first_json(text);
    if (!doc.is_object() || !doc.contains("primary") || !doc.at("primary").is_string())
        throw Error(ErrorCode::ParseFailure, "signature: missing string 'primary'");
    PerformanceSignature sig;
    sig.primary_bottleneck = normalize_bottleneck_label(doc.at("primary").get<std::string>());
    if (doc.contains("secondary") && doc.at("secondary").is_string()) {
        std::string secondary = normalize_bottleneck_label(doc.at("secondary").get<std::string>());
        if (secondary != sig.primary_bottleneck) sig.secondary_bottleneck = std::move(secondary);
    }
    return sig;
}

/// Parses a proposal-list response. Invalid items are dropped with an event
/// rather than failing the whole response.
inline std::vector<OptimizationEntry> parse_proposals(const std::string& text,
                                                      EventLog* events = nullptr) {
    nlohmann::json doc = parse_first_json(text);
    if (!doc.is_array()) throw Error(ErrorCode::ParseFailure, "proposal list: expected array");
    std::vector<OptimizationEntry> out;
    std::size_t index = 0;
    for (const auto& item : doc) {
        const std::string locus = "proposal[" + std::to_string(index++) + "]";
        if (!item.is_object() || !item.contains("name") || !item.at("name").is_string() ||
            item.at("name").get<std::string>().empty() ||
            (item.contains("predicted_gain") && !item.at("predicted_gain").is_number())) {
            if (events) events->warn("proposal_dropped", locus + ": malformed item");
            continue;
        }
        OptimizationEntry entry;
        entry.name = item.at("name").get<std::string>();
        entry.opt_id = slugify(entry.name);
        entry.description = item.value("description", "");
        entry.predicted_gain = item.value("predicted_gain", 1.0);
        if (entry.predicted_gain <= 0.0) {
            if (events) events->warn("proposal_dropped", locus + ": non-positive predicted_gain");
            continue;
        }
        bool duplicate = false;
        for (const auto& existing : out) duplicate |= existing.opt_id == entry.opt_id;
        if (duplicate) {
            if (events) events->warn("proposal_dropped", locus + ": duplicate name");
            continue;
        }
        out.push_back(std::move(entry));
    }
    return out;
}

struct SoftVerdict {
    bool accept = true;
    std::string reason; // "functionality_removed" | "external_library" | "other"
};

inline SoftVerdict parse_soft_verdict(const std::string& text) {
    nlohmann::json doc = parse_first_json(text);
    if (!doc.is_object() || !doc.contains("verdict") || !doc.at("verdict").is_string())
        throw Error(ErrorCode::ParseFailure, "soft verdict: missing string 'verdict'");
    const std::string verdict = doc.at("verdict").get<std::string>();
    if (verdict == "accept") return {true, ""};
    if (verdict != "reject")
        throw Error(ErrorCode::ParseFailure, "soft verdict: unknown verdict '" + verdict + "'");
    std::string reason = doc.value("reason", "other");
    if (reason != "functionality_removed" && reason != "external_library") reason = "other";
    return {false, reason};
}

/// Generic entry point: returns the structured payload for a schema id as
/// JSON. Typed call sites use the dedicated parse_* helpers.
inline nlohmann::json parse_structured(const std::string& text, std::string_view schema_id,
                                       EventLog* events = nullptr) {
    if (schema_id == "code_block") return nlohmann::json(parse_code_block(text));
    if (schema_id == "gap_rationale") {
        std::string trimmed = trim(text);
        if (trimmed.empty()) throw Error(ErrorCode::ParseFailure, "empty rationale");
        return nlohmann::json(trimmed);
    }
    if (schema_id == "signature") {
        const auto sig = parse_signature(text);
        nlohmann::json out{{"primary", sig.primary_bottleneck}};
        out["secondary"] =
            sig.secondary_bottleneck ? nlohmann::json(*sig.secondary_bottleneck) : nlohmann::json();
        return out;
    }
    if (schema_id == "proposal_list") {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& entry : parse_proposals(text, events))
            out.push_back({{"name", entry.name},
                           {"description", entry.description},
                           {"predicted_gain", entry.predicted_gain}});
        return out;
    }
    if (schema_id == "soft_verdict") {
        const auto verdict = parse_soft_verdict(text);
        return verdict.accept
                   ? nlohmann::json{{"verdict", "accept"}}
                   : nlohmann::json{{"verdict", "reject"}, {"reason", verdict.reason}};
    }
    if (schema_id == "analysis_report") {
        nlohmann::json doc = parse_first_json(text);
        if (!doc.is_object()) throw Error(ErrorCode::ParseFailure, "analysis report: expected object");
        return doc;
    }
    throw Error(ErrorCode::ParseFailure, "unknown schema id '" + std::string(schema_id) + "'");
}

// ---------------------------------------------------------------------------
// Live extraction (the agent-backed state extractor with rule fallback)

/// Agent-assisted signature extraction. Malformed responses are retried
/// once, then the deterministic classifier takes over; transport failures
/// surface as AgentUnavailable.
inline PerformanceSignature extract_signature_live(Agent& agent, const ProfileReport& report,
                                                   const std::string& code_excerpt,
                                                   const ClassifierConfig& config = {},
                                                   TokenCounter* tokens = nullptr) {
    AgentRequest request;
    request.role = AgentRole::StateExtractor;
    request.response_schema_id = "signature";
    request.rendered_prompt = render_prompt(AgentRole::StateExtractor,
                                            {{"profile_summary", render_profile_summary(report)},
                                             {"code_excerpt", code_excerpt}});
    for (int attempt = 0; attempt < 2; ++attempt) {
        AgentResponse response = agent.complete(request);
        if (tokens) tokens->add(AgentRole::StateExtractor, response);
        try {
            return parse_signature(response.text);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ParseFailure) throw;
        }
    }
    return classify_bottleneck(report, config);
}

} // namespace kblaze

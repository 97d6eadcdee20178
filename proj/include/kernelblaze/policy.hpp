#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "kernelblaze/agents.hpp"
#include "kernelblaze/knowledge_base.hpp"
#include "kernelblaze/rng.hpp"

namespace kblaze {

struct PolicyConfig {
    int top_k = 4;
    double epsilon = 0.05;          // weight floor keeps every candidate selectable
    double proposal_gain_min = 0.5; // clamp range for agent-supplied priors
    double proposal_gain_max = 10.0;
    int max_proposals = 8;
    int proposal_retries = 2;
};

inline std::vector<OptimizationEntry> candidate_set(const KnowledgeBase& kb,
                                                    std::string_view state_id) {
    const auto* state = kb.find_state(state_id);
    if (!state) throw Error(ErrorCode::UnknownState, std::string(state_id));
    return state->optimizations;
}

/// Sampling weight: gains are recentred at neutral (1.0) so that entries
/// with no expected benefit sit at the epsilon floor but stay selectable.
inline double sampling_weight(double predicted_gain, double epsilon = 0.05) {
    return std::max(predicted_gain - 1.0, epsilon) + epsilon;
}

/// Weighted sampling without replacement by exponential keys: each candidate
/// draws u ~ U(0,1) from the seeded stream in stored order and is ranked by
/// u^(1/w). Bit-reproducible for a fixed seed on any platform.
inline std::vector<OptimizationEntry> weighted_top_k(const std::vector<OptimizationEntry>& candidates,
                                                     int k, std::uint64_t seed,
                                                     double epsilon = 0.05) {
    if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "no candidates to sample");
    if (k < 1) throw Error(ErrorCode::InvalidSpec, "k must be >= 1");

    Rng rng(seed);
    std::vector<std::pair<double, std::size_t>> keyed;
    keyed.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double u = rng.uniform();
        const double w = sampling_weight(candidates[i].predicted_gain, epsilon);
        keyed.emplace_back(std::pow(u, 1.0 / w), i);
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), keyed.size());
    std::vector<OptimizationEntry> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(candidates[keyed[i].second]);
    return out;
}

/// Asks the proposer agent for fresh candidates for a state with none.
/// Gains are clamped to the configured prior range; zero usable entries
/// after the retry budget is an error.
inline std::vector<OptimizationEntry> propose_new_optimizations(Agent& agent,
                                                                const PerformanceState& state,
                                                                const ProfileReport& report,
                                                                const PolicyConfig& config = {},
                                                                EventLog* events = nullptr,
                                                                TokenCounter* tokens = nullptr) {
    AgentRequest request;
    request.role = AgentRole::OptimizationProposer;
    request.response_schema_id = "proposal_list";
    request.rendered_prompt =
        render_prompt(AgentRole::OptimizationProposer,
                      {{"state_name", state.display_name.empty() ? state.state_id : state.display_name},
                       {"bottleneck", state.primary_bottleneck},
                       {"profile_summary", render_profile_summary(report)}});

    for (int attempt = 0; attempt <= config.proposal_retries; ++attempt) {
        AgentResponse response = agent.complete(request);
        if (tokens) tokens->add(AgentRole::OptimizationProposer, response);
        std::vector<OptimizationEntry> proposals;
        try {
            proposals = parse_proposals(response.text, events);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ParseFailure) throw;
            continue;
        }
        if (proposals.empty()) continue;
        if (proposals.size() > static_cast<std::size_t>(config.max_proposals))
            proposals.resize(static_cast<std::size_t>(config.max_proposals));
        for (auto& entry : proposals) {
            entry.predicted_gain = std::clamp(entry.predicted_gain, config.proposal_gain_min,
                                              config.proposal_gain_max);
            entry.observation_count = 0;
            entry.success_count = 0;
        }
        return proposals;
    }
    throw Error(ErrorCode::EmptyProposal, "agent returned no valid proposals for state " +
                                              state.state_id);
}

} // namespace kblaze

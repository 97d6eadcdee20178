#pragma once

#include <map>
#include <set>
#include <string>

#include "kernelblaze/knowledge_base.hpp"
#include "kernelblaze/profile.hpp"
#include "kernelblaze/taxonomy.hpp"

namespace kblaze {

/// Thresholds of the deterministic bottleneck classifier, centralized so
/// they can be tuned from the engine config file.
struct ClassifierConfig {
    double secondary_ratio = 0.5;        // secondary kept if score >= ratio * primary
    double balanced_floor = 0.3;         // below this for every rule -> balanced
    double occupancy_threshold_pct = 50.0;
    double launch_cycle_threshold = 2000.0;   // mean cycles per invocation
    std::int64_t launch_invocation_threshold = 8; // rule needs count strictly above
};

namespace detail {

struct AggregatedProfile {
    std::map<std::string, double> metrics;        // cycle-weighted means
    std::map<std::string, double> stalls;         // cycle-weighted means
    std::set<std::string> present;                // metrics reported anywhere
    double mean_invocation_cycles = 0.0;
    std::int64_t invocation_count = 0;
    std::int64_t total_cycles = 0;
};

/// Cycle-weighted program-level aggregation. An invocation that does not
/// report a metric contributes zero at full weight, so metrics local to a
/// minor kernel cannot dominate the program signature.
inline AggregatedProfile aggregate_profile(const ProfileReport& report) {
    AggregatedProfile agg;
    agg.total_cycles = total_elapsed_cycles(report);
    agg.invocation_count = static_cast<std::int64_t>(report.kernels.size());
    agg.mean_invocation_cycles =
        static_cast<double>(agg.total_cycles) / static_cast<double>(agg.invocation_count);
    const double denom = static_cast<double>(agg.total_cycles);
    for (const auto& k : report.kernels) {
        const double w = static_cast<double>(k.elapsed_cycles) / denom;
        for (const auto& [key, value] : k.metrics) {
            agg.metrics[key] += w * value;
            agg.present.insert(key);
        }
        for (const auto& [key, value] : k.stall_breakdown) agg.stalls[key] += w * value;
    }
    return agg;
}

} // namespace detail

/// Deterministic substitute for the agent-based state extractor: a fixed
/// rule table over the aggregated profile. Pure function of its input.
inline PerformanceSignature classify_bottleneck(const ProfileReport& report,
                                                const ClassifierConfig& config = {}) {
    const auto agg = detail::aggregate_profile(report);

    auto metric = [&](const char* key) {
        auto it = agg.metrics.find(key);
        return it == agg.metrics.end() ? 0.0 : it->second;
    };

    // Rule order is the tie-break order.
    std::vector<std::pair<std::string, double>> scores;
    scores.emplace_back("dram_bandwidth_bound", metric("dram_throughput_pct") / 100.0);
    scores.emplace_back("compute_fp_bound", metric("sm_fp_throughput_pct") / 100.0);
    double max_stall = 0.0;
    for (const auto& [key, value] : agg.stalls) max_stall = std::max(max_stall, value);
    scores.emplace_back("latency_stall_bound", max_stall);
    double occ_score = 0.0;
    if (agg.present.count("achieved_occupancy_pct")) {
        const double occ = metric("achieved_occupancy_pct");
        if (occ < config.occupancy_threshold_pct) occ_score = 1.0 - occ / 100.0;
    }
    scores.emplace_back("occupancy_limited", occ_score);
    const bool launch = agg.invocation_count > config.launch_invocation_threshold &&
                        agg.mean_invocation_cycles < config.launch_cycle_threshold;
    scores.emplace_back("launch_overhead_bound", launch ? 1.0 : 0.0);

    std::size_t top = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i].second > scores[top].second) top = i;

    PerformanceSignature sig;
    for (const auto& [label, score] : scores)
        if (score > 0.0) sig.evidence["score." + label] = score;
    for (const auto& [key, value] : agg.metrics) sig.evidence[key] = value;
    for (const auto& [key, value] : agg.stalls) sig.evidence["stall." + key] = value;
    sig.evidence["mean_invocation_cycles"] = agg.mean_invocation_cycles;
    sig.evidence["invocation_count"] = static_cast<double>(agg.invocation_count);

    if (scores[top].second <= config.balanced_floor) {
        sig.primary_bottleneck = "balanced";
        return sig;
    }
    sig.primary_bottleneck = scores[top].first;

    std::size_t second = scores.size();
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i == top) continue;
        if (second == scores.size() || scores[i].second > scores[second].second) second = i;
    }
    if (second < scores.size() && scores[second].second > 0.0 &&
        scores[second].second >= config.secondary_ratio * scores[top].second)
        sig.secondary_bottleneck = scores[second].first;
    return sig;
}

inline MatchResult match_state(const KnowledgeBase& kb, const PerformanceSignature& sig) {
    return lookup_state(kb, sig);
}

/// Compact textual rendering of a report for prompt contexts.
inline std::string render_profile_summary(const ProfileReport& report) {
    const auto agg = detail::aggregate_profile(report);
    std::string out = "total_cycles=" + std::to_string(agg.total_cycles) +
                      "; invocations=" + std::to_string(agg.invocation_count);
    for (const auto& [key, value] : agg.metrics) out += "; " + key + "=" + format_float6(value);
    for (const auto& [key, value] : agg.stalls)
        out += "; stall." + key + "=" + format_float6(value);
    return out;
}

} // namespace kblaze

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kernelblaze/errors.hpp"
#include "kernelblaze/taxonomy.hpp"
#include "kernelblaze/util.hpp"

namespace kblaze {

inline constexpr int kKbFormatVersion = 1;
inline constexpr std::size_t kKbSoftSizeCapBytes = 512 * 1024;
inline constexpr double kSuccessGainThreshold = 1.01;
inline constexpr double kDefaultAlpha = 0.3;

/// One scored optimization: the score is the predicted speedup multiplier
/// (1.0 = neutral), refined by an exponential moving average of observations.
struct OptimizationEntry {
    std::string opt_id;
    std::string name;
    std::string description;
    double predicted_gain = 1.0;
    std::int64_t observation_count = 0;
    std::int64_t success_count = 0;
    std::int64_t last_updated_iteration = 0;
};

struct PerformanceState {
    std::string state_id;
    std::string display_name;
    std::string primary_bottleneck;
    std::optional<std::string> secondary_bottleneck;
    std::string description;
    std::vector<OptimizationEntry> optimizations;

    const OptimizationEntry* find_optimization(std::string_view opt_id) const {
        for (const auto& opt : optimizations)
            if (opt.opt_id == opt_id) return &opt;
        return nullptr;
    }
    OptimizationEntry* find_optimization(std::string_view opt_id) {
        for (auto& opt : optimizations)
            if (opt.opt_id == opt_id) return &opt;
        return nullptr;
    }
    std::int64_t total_observation_count() const {
        std::int64_t total = 0;
        for (const auto& opt : optimizations) total += opt.observation_count;
        return total;
    }
};

/// The policy parameters: an append-only store of states and scored
/// optimizations. States and entries are never removed; only score fields
/// mutate.
struct KnowledgeBase {
    int format_version = kKbFormatVersion;
    std::string hardware_tag = "sim";
    std::vector<PerformanceState> states;
    std::int64_t update_count = 0;
    std::string created_at;
    std::string updated_at;

    const PerformanceState* find_state(std::string_view state_id) const {
        for (const auto& s : states)
            if (s.state_id == state_id) return &s;
        return nullptr;
    }
    PerformanceState* find_state(std::string_view state_id) {
        for (auto& s : states)
            if (s.state_id == state_id) return &s;
        return nullptr;
    }
};

inline KnowledgeBase make_knowledge_base(std::string hardware_tag,
                                         const Clock& clock = Clock::realtime()) {
    KnowledgeBase kb;
    kb.hardware_tag = std::move(hardware_tag);
    kb.created_at = clock.now_rfc3339();
    kb.updated_at = kb.created_at;
    return kb;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void check(bool ok, ErrorCode code, const std::string& locus) {
    if (!ok) throw Error(code, locus);
}

} // namespace detail

/// Full invariant check; `code` selects the error category so file loading
/// reports MalformedFile while in-memory updates report SchemaViolation.
inline void validate_kb(const KnowledgeBase& kb, ErrorCode code = ErrorCode::SchemaViolation) {
    using detail::check;
    check(kb.update_count >= 0, code, "update_count must be non-negative");
    for (std::size_t si = 0; si < kb.states.size(); ++si) {
        const auto& state = kb.states[si];
        const std::string locus = "states[" + std::to_string(si) + "]";
        check(is_slug_text(state.state_id), code, locus + ".state_id: not a slug");
        for (std::size_t sj = 0; sj < si; ++sj)
            check(kb.states[sj].state_id != state.state_id, code,
                  locus + ".state_id: duplicate '" + state.state_id + "'");
        check(is_valid_bottleneck_label(state.primary_bottleneck), code,
              locus + ".primary_bottleneck: unknown label '" + state.primary_bottleneck + "'");
        if (state.secondary_bottleneck) {
            check(is_valid_bottleneck_label(*state.secondary_bottleneck), code,
                  locus + ".secondary_bottleneck: unknown label");
            check(*state.secondary_bottleneck != state.primary_bottleneck, code,
                  locus + ": secondary equals primary");
        }
        for (std::size_t oi = 0; oi < state.optimizations.size(); ++oi) {
            const auto& opt = state.optimizations[oi];
            const std::string olocus = locus + ".optimizations[" + std::to_string(oi) + "]";
            check(is_slug_text(opt.opt_id), code, olocus + ".opt_id: not a slug");
            for (std::size_t oj = 0; oj < oi; ++oj)
                check(state.optimizations[oj].opt_id != opt.opt_id, code,
                      olocus + ".opt_id: duplicate '" + opt.opt_id + "'");
            check(std::isfinite(opt.predicted_gain) && opt.predicted_gain > 0.0, code,
                  olocus + ".predicted_gain: must be > 0");
            check(opt.observation_count >= 0, code, olocus + ".observation_count: negative");
            check(opt.success_count >= 0 && opt.success_count <= opt.observation_count, code,
                  olocus + ".success_count: exceeds observation_count");
        }
    }
}

// ---------------------------------------------------------------------------
// Mutation

inline std::string add_state(KnowledgeBase& kb, PerformanceState state,
                             const Clock& clock = Clock::realtime()) {
    if (state.state_id.empty()) state.state_id = slugify(state.display_name);
    if (kb.find_state(state.state_id))
        throw Error(ErrorCode::DuplicateState, "state '" + state.state_id + "' already present");
    KnowledgeBase probe;
    probe.states.push_back(state);
    validate_kb(probe);
    kb.states.push_back(std::move(state));
    kb.update_count += 1;
    kb.updated_at = clock.now_rfc3339();
    return kb.states.back().state_id;
}

inline std::string add_optimization(KnowledgeBase& kb, std::string_view state_id,
                                    OptimizationEntry entry,
                                    const Clock& clock = Clock::realtime()) {
    auto* state = kb.find_state(state_id);
    if (!state) throw Error(ErrorCode::UnknownState, std::string(state_id));
    if (entry.opt_id.empty()) entry.opt_id = slugify(entry.name);
    if (state->find_optimization(entry.opt_id))
        throw Error(ErrorCode::DuplicateOptimization,
                    entry.opt_id + " already present in state " + std::string(state_id));
    if (!std::isfinite(entry.predicted_gain) || entry.predicted_gain <= 0.0)
        throw Error(ErrorCode::SchemaViolation, "predicted_gain must be > 0");
    if (entry.success_count > entry.observation_count)
        throw Error(ErrorCode::SchemaViolation, "success_count exceeds observation_count");
    state->optimizations.push_back(std::move(entry));
    kb.update_count += 1;
    kb.updated_at = clock.now_rfc3339();
    return state->optimizations.back().opt_id;
}

namespace detail {

/// EMA core shared by update_score and parameter_update. Accepts
/// observed_gain = 0 (pure-failure feedback) and clamps the result positive.
inline double apply_ema(KnowledgeBase& kb, PerformanceState& state, OptimizationEntry& opt,
                        double observed_gain, double alpha, const Clock& clock) {
    (void)state;
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw Error(ErrorCode::InvalidSpec, "alpha must be in (0, 1]");
    if (!(observed_gain >= 0.0) || !std::isfinite(observed_gain))
        throw Error(ErrorCode::InvalidSpec, "observed_gain must be finite and >= 0");
    double next = (1.0 - alpha) * opt.predicted_gain + alpha * observed_gain;
    opt.predicted_gain = std::max(next, 1e-6);
    opt.observation_count += 1;
    if (observed_gain > kSuccessGainThreshold) opt.success_count += 1;
    kb.update_count += 1;
    opt.last_updated_iteration = kb.update_count;
    kb.updated_at = clock.now_rfc3339();
    return opt.predicted_gain;
}

} // namespace detail

inline double update_score(KnowledgeBase& kb, std::string_view state_id, std::string_view opt_id,
                           double observed_gain, double alpha = kDefaultAlpha,
                           const Clock& clock = Clock::realtime()) {
    auto* state = kb.find_state(state_id);
    if (!state) throw Error(ErrorCode::UnknownState, std::string(state_id));
    auto* opt = state->find_optimization(opt_id);
    if (!opt) throw Error(ErrorCode::UnknownOptimization, std::string(opt_id));
    if (!(observed_gain > 0.0))
        throw Error(ErrorCode::InvalidSpec, "observed_gain must be > 0");
    return detail::apply_ema(kb, *state, *opt, observed_gain, alpha, clock);
}

/// State union; colliding entries combine predicted_gain by
/// observation-count-weighted mean (plain mean when both counts are zero)
/// and sum their counts.
inline KnowledgeBase merge(const KnowledgeBase& a, const KnowledgeBase& b,
                           const Clock& clock = Clock::realtime()) {
    if (a.format_version != b.format_version)
        throw Error(ErrorCode::VersionMismatch,
                    std::to_string(a.format_version) + " vs " + std::to_string(b.format_version));
    validate_kb(a);
    validate_kb(b);

    KnowledgeBase out = a;
    for (const auto& bstate : b.states) {
        auto* ostate = out.find_state(bstate.state_id);
        if (!ostate) {
            out.states.push_back(bstate);
            continue;
        }
        for (const auto& bopt : bstate.optimizations) {
            auto* oopt = ostate->find_optimization(bopt.opt_id);
            if (!oopt) {
                ostate->optimizations.push_back(bopt);
                continue;
            }
            const double wa = static_cast<double>(oopt->observation_count);
            const double wb = static_cast<double>(bopt.observation_count);
            oopt->predicted_gain = (wa + wb > 0.0)
                                       ? (oopt->predicted_gain * wa + bopt.predicted_gain * wb) /
                                             (wa + wb)
                                       : (oopt->predicted_gain + bopt.predicted_gain) / 2.0;
            oopt->observation_count += bopt.observation_count;
            oopt->success_count += bopt.success_count;
            oopt->last_updated_iteration =
                std::max(oopt->last_updated_iteration, bopt.last_updated_iteration);
        }
    }
    out.update_count = std::max(a.update_count, b.update_count);
    out.created_at = std::min(a.created_at, b.created_at);
    out.updated_at = clock.now_rfc3339();
    return out;
}

// ---------------------------------------------------------------------------
// Matching

enum class MatchQuality { Exact, Partial };

struct MatchResult {
    bool known = false;
    std::string state_id;
    MatchQuality quality = MatchQuality::Exact;

    static MatchResult discovered() { return {}; }
};

/// Known iff the signature matches a stored state exactly on
/// (primary, secondary), or failing that on primary alone. Ambiguity is
/// resolved by largest total observation count, then smallest state_id.
inline MatchResult lookup_state(const KnowledgeBase& kb, const PerformanceSignature& sig) {
    const PerformanceState* best = nullptr;
    bool best_exact = false;
    auto better = [](const PerformanceState& s, const PerformanceState* cur) {
        if (!cur) return true;
        const auto sn = s.total_observation_count();
        const auto cn = cur->total_observation_count();
        if (sn != cn) return sn > cn;
        return s.state_id < cur->state_id;
    };
    for (const auto& state : kb.states) {
        if (state.primary_bottleneck != sig.primary_bottleneck) continue;
        const bool exact = state.secondary_bottleneck == sig.secondary_bottleneck;
        if (exact && !best_exact) {
            best = &state;
            best_exact = true;
        } else if (exact == best_exact && better(state, best)) {
            best = &state;
        }
    }
    if (!best) return MatchResult::discovered();
    return {true, best->state_id, best_exact ? MatchQuality::Exact : MatchQuality::Partial};
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline std::string quote_json(const std::string& s) { return nlohmann::json(s).dump(); }

} // namespace detail

/// Canonical document: keys sorted lexicographically, 2-space indent, floats
/// with 6 significant digits, trailing newline. The same KB always produces
/// identical bytes.
inline std::string kb_to_json_string(const KnowledgeBase& kb) {
    using detail::quote_json;
    std::string out;
    out += "{\n";
    out += "  \"created_at\": " + quote_json(kb.created_at) + ",\n";
    out += "  \"format_version\": " + std::to_string(kb.format_version) + ",\n";
    out += "  \"hardware_tag\": " + quote_json(kb.hardware_tag) + ",\n";
    if (kb.states.empty()) {
        out += "  \"states\": [],\n";
    } else {
        out += "  \"states\": [\n";
        for (std::size_t si = 0; si < kb.states.size(); ++si) {
            const auto& state = kb.states[si];
            out += "    {\n";
            out += "      \"description\": " + quote_json(state.description) + ",\n";
            out += "      \"display_name\": " + quote_json(state.display_name) + ",\n";
            if (state.optimizations.empty()) {
                out += "      \"optimizations\": [],\n";
            } else {
                out += "      \"optimizations\": [\n";
                for (std::size_t oi = 0; oi < state.optimizations.size(); ++oi) {
                    const auto& opt = state.optimizations[oi];
                    out += "        {\n";
                    out += "          \"description\": " + quote_json(opt.description) + ",\n";
                    out += "          \"last_updated_iteration\": " +
                           std::to_string(opt.last_updated_iteration) + ",\n";
                    out += "          \"name\": " + quote_json(opt.name) + ",\n";
                    out += "          \"observation_count\": " +
                           std::to_string(opt.observation_count) + ",\n";
                    out += "          \"opt_id\": " + quote_json(opt.opt_id) + ",\n";
                    out += "          \"predicted_gain\": " + format_float6(opt.predicted_gain) +
                           ",\n";
                    out += "          \"success_count\": " + std::to_string(opt.success_count) +
                           "\n";
                    out += (oi + 1 < state.optimizations.size()) ? "        },\n" : "        }\n";
                }
                out += "      ],\n";
            }
            out += "      \"primary_bottleneck\": " + quote_json(state.primary_bottleneck) + ",\n";
            out += "      \"secondary_bottleneck\": " +
                   (state.secondary_bottleneck ? quote_json(*state.secondary_bottleneck)
                                               : std::string("null")) +
                   ",\n";
            out += "      \"state_id\": " + quote_json(state.state_id) + "\n";
            out += (si + 1 < kb.states.size()) ? "    },\n" : "    }\n";
        }
        out += "  ],\n";
    }
    out += "  \"update_count\": " + std::to_string(kb.update_count) + ",\n";
    out += "  \"updated_at\": " + quote_json(kb.updated_at) + "\n";
    out += "}\n";
    return out;
}

inline void save(const KnowledgeBase& kb, const std::string& path, EventLog* events = nullptr) {
    validate_kb(kb);
    const std::string doc = kb_to_json_string(kb);
    if (doc.size() > kKbSoftSizeCapBytes && events)
        events->warn("kb_size_cap",
                     "knowledge base serialized to " + std::to_string(doc.size()) +
                         " bytes, above the soft cap of " + std::to_string(kKbSoftSizeCapBytes));
    write_file(path, doc);
}

namespace detail {

template <typename T>
T get_field(const nlohmann::json& obj, const char* key, const std::string& locus) {
    if (!obj.contains(key))
        throw Error(ErrorCode::MalformedFile, locus + ": missing key '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::MalformedFile, locus + ": bad type for key '" + key + "'");
    }
}

} // namespace detail

inline KnowledgeBase kb_from_json_string(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::MalformedFile, e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::MalformedFile, "top level must be an object");

    KnowledgeBase kb;
    kb.format_version = detail::get_field<int>(doc, "format_version", "$");
    if (kb.format_version != kKbFormatVersion)
        throw Error(ErrorCode::VersionUnsupported,
                    "format_version " + std::to_string(kb.format_version));
    kb.hardware_tag = detail::get_field<std::string>(doc, "hardware_tag", "$");
    kb.update_count = detail::get_field<std::int64_t>(doc, "update_count", "$");
    kb.created_at = detail::get_field<std::string>(doc, "created_at", "$");
    kb.updated_at = detail::get_field<std::string>(doc, "updated_at", "$");
    if (!doc.contains("states") || !doc.at("states").is_array())
        throw Error(ErrorCode::MalformedFile, "$.states: missing or not an array");

    std::size_t si = 0;
    for (const auto& jstate : doc.at("states")) {
        const std::string locus = "$.states[" + std::to_string(si++) + "]";
        if (!jstate.is_object()) throw Error(ErrorCode::MalformedFile, locus + ": not an object");
        PerformanceState state;
        state.state_id = detail::get_field<std::string>(jstate, "state_id", locus);
        state.display_name = detail::get_field<std::string>(jstate, "display_name", locus);
        state.primary_bottleneck =
            detail::get_field<std::string>(jstate, "primary_bottleneck", locus);
        if (!jstate.contains("secondary_bottleneck"))
            throw Error(ErrorCode::MalformedFile, locus + ": missing key 'secondary_bottleneck'");
        if (!jstate.at("secondary_bottleneck").is_null())
            state.secondary_bottleneck =
                detail::get_field<std::string>(jstate, "secondary_bottleneck", locus);
        state.description = detail::get_field<std::string>(jstate, "description", locus);
        if (!jstate.contains("optimizations") || !jstate.at("optimizations").is_array())
            throw Error(ErrorCode::MalformedFile, locus + ".optimizations: missing or not an array");
        std::size_t oi = 0;
        for (const auto& jopt : jstate.at("optimizations")) {
            const std::string olocus = locus + ".optimizations[" + std::to_string(oi++) + "]";
            if (!jopt.is_object()) throw Error(ErrorCode::MalformedFile, olocus + ": not an object");
            OptimizationEntry opt;
            opt.opt_id = detail::get_field<std::string>(jopt, "opt_id", olocus);
            opt.name = detail::get_field<std::string>(jopt, "name", olocus);
            opt.description = detail::get_field<std::string>(jopt, "description", olocus);
            opt.predicted_gain = detail::get_field<double>(jopt, "predicted_gain", olocus);
            opt.observation_count = detail::get_field<std::int64_t>(jopt, "observation_count", olocus);
            opt.success_count = detail::get_field<std::int64_t>(jopt, "success_count", olocus);
            opt.last_updated_iteration =
                detail::get_field<std::int64_t>(jopt, "last_updated_iteration", olocus);
            state.optimizations.push_back(std::move(opt));
        }
        kb.states.push_back(std::move(state));
    }
    validate_kb(kb, ErrorCode::MalformedFile);
    return kb;
}

inline KnowledgeBase load(const std::string& path) {
    return kb_from_json_string(read_file(path));
}

} // namespace kblaze

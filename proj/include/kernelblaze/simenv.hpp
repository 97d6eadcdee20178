#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kernelblaze/canonical_json.hpp"
#include "kernelblaze/errors.hpp"
#include "kernelblaze/harness.hpp"
#include "kernelblaze/profile.hpp"
#include "kernelblaze/rng.hpp"
#include "kernelblaze/state_engine.hpp"

namespace kblaze {

// ---------------------------------------------------------------------------
// Domain types

enum class FailureMode { None, Compile, Verify };

inline std::string_view failure_mode_name(FailureMode mode) {
    switch (mode) {
        case FailureMode::None: return "none";
        case FailureMode::Compile: return "compile";
        case FailureMode::Verify: return "verify";
    }
    return "none";
}

struct Effect {
    double cycle_factor = 1.0;
    std::string next_state;
    FailureMode failure_mode = FailureMode::None;
};

struct HiddenState {
    std::string name;
    PerformanceSignature intended_signature;
    std::string kernel_name = "main_kernel";
    int invocations = 4;
    std::map<std::string, double> metrics;
    std::map<std::string, double> stalls;
};

/// A synthetic optimization task: a hidden state machine whose ground-truth
/// effect table stands in for GPU execution. Everything is a deterministic
/// function of the generator seed.
struct SyntheticTask {
    std::string task_id;
    std::int64_t base_cycles = 1000000;
    std::int64_t baseline_cycles = 1000000;
    std::vector<HiddenState> hidden_states;
    std::map<std::pair<std::string, std::string>, Effect> effect_table; // (state, opt) -> effect
    std::string start_state;
    std::vector<std::string> declared_ops;
    VerificationSpec verification;
    int verify_failure_seed_ordinal = 1;

    const HiddenState* find_hidden(std::string_view name) const {
        for (const auto& s : hidden_states)
            if (s.name == name) return &s;
        return nullptr;
    }
};

struct SyntheticVariant {
    std::string task_id;
    std::string variant_id;
    std::string current_hidden_state;
    std::int64_t cumulative_cycles = 0;
    std::vector<std::string> applied_ops;
    double cycle_product = 1.0;
};

struct SimTaskSpecParams {
    int n_states = 4;
    int n_opts = 6;
    int depth_of_best_chain = 2;
};

// ---------------------------------------------------------------------------
// Generator vocabulary

namespace simgen {

inline constexpr std::array<std::string_view, 12> kOpPool = {
    "shared_memory_tiling", "tensor_core_utilization", "instruction_level_parallelism",
    "grid_size_optimization", "kernel_fusion", "vectorized_loads",
    "thread_coarsening", "register_blocking", "warp_shuffle_reduction",
    "memory_coalescing", "loop_unrolling", "fast_math",
};

/// Bottleneck families a chain state can carry. The affinity op is the one
/// transformation that genuinely relieves that bottleneck; it is fixed per
/// family so knowledge transfers across generated tasks.
struct Family {
    std::string_view key;
    std::string_view primary;
    std::string_view chain_op;
    std::size_t chain_op_index; // index into kOpPool
    double factor_lo, factor_hi;
    std::string_view kernel_name;
};

inline constexpr std::array<Family, 4> kFamilies = {{
    {"dram", "dram_bandwidth_bound", "shared_memory_tiling", 0, 0.55, 0.70, "vector_scale"},
    {"fp", "compute_fp_bound", "tensor_core_utilization", 1, 0.50, 0.65, "gemm_main"},
    {"stall", "latency_stall_bound", "instruction_level_parallelism", 2, 0.65, 0.80, "reduce_stage"},
    {"occ", "occupancy_limited", "grid_size_optimization", 3, 0.60, 0.75, "scatter_update"},
}};

inline HiddenState make_family_state(const Family& family, const std::string& name, Rng& rng) {
    HiddenState state;
    state.name = name;
    state.kernel_name = std::string(family.kernel_name);
    state.invocations = 2 + static_cast<int>(rng.below(5)); // 2..6, below the launch rule
    state.intended_signature.primary_bottleneck = std::string(family.primary);
    if (family.key == "dram") {
        state.metrics["dram_throughput_pct"] = rng.uniform_in(85.0, 92.0);
        state.metrics["sm_fp_throughput_pct"] = rng.uniform_in(10.0, 25.0);
        state.metrics["achieved_occupancy_pct"] = rng.uniform_in(60.0, 80.0);
        state.stalls["long_scoreboard"] = rng.uniform_in(0.10, 0.25);
    } else if (family.key == "fp") {
        state.metrics["sm_fp_throughput_pct"] = rng.uniform_in(84.0, 92.0);
        state.metrics["dram_throughput_pct"] = rng.uniform_in(10.0, 25.0);
        state.metrics["achieved_occupancy_pct"] = rng.uniform_in(55.0, 75.0);
        state.stalls["short_scoreboard"] = rng.uniform_in(0.10, 0.25);
    } else if (family.key == "stall") {
        state.stalls["long_scoreboard"] = rng.uniform_in(0.65, 0.80);
        state.metrics["dram_throughput_pct"] = rng.uniform_in(15.0, 28.0);
        state.metrics["sm_fp_throughput_pct"] = rng.uniform_in(10.0, 25.0);
        state.metrics["achieved_occupancy_pct"] = rng.uniform_in(55.0, 75.0);
    } else { // occ
        state.metrics["achieved_occupancy_pct"] = rng.uniform_in(25.0, 38.0);
        state.metrics["dram_throughput_pct"] = rng.uniform_in(12.0, 25.0);
        state.metrics["sm_fp_throughput_pct"] = rng.uniform_in(12.0, 25.0);
        state.stalls["long_scoreboard"] = rng.uniform_in(0.10, 0.28);
    }
    return state;
}

inline HiddenState make_balanced_state(const std::string& name, Rng& rng) {
    HiddenState state;
    state.name = name;
    state.kernel_name = "epilogue";
    state.invocations = 2 + static_cast<int>(rng.below(5));
    state.intended_signature.primary_bottleneck = "balanced";
    state.metrics["dram_throughput_pct"] = rng.uniform_in(18.0, 28.0);
    state.metrics["sm_fp_throughput_pct"] = rng.uniform_in(18.0, 28.0);
    state.metrics["achieved_occupancy_pct"] = rng.uniform_in(55.0, 80.0);
    state.stalls["long_scoreboard"] = rng.uniform_in(0.10, 0.28);
    return state;
}

} // namespace simgen

// ---------------------------------------------------------------------------
// Report emission and variant arithmetic

inline std::int64_t scaled_cycles(std::int64_t base_cycles, double cycle_product) {
    return std::max<std::int64_t>(1, std::llround(static_cast<double>(base_cycles) * cycle_product));
}

/// Emits the profile of a hidden state at a given total cycle count. The
/// per-invocation apportionment is exact: invocation cycles always sum to
/// the requested total.
inline ProfileReport emit_report(const SyntheticTask& task, const HiddenState& state,
                                 std::int64_t total_cycles) {
    const int n = state.invocations;
    const std::int64_t per = total_cycles / n;
    const std::int64_t rem = total_cycles % n;
    if (per < 1)
        throw Error(ErrorCode::BackendError,
                    task.task_id + ": cycle budget too small for " + std::to_string(n) +
                        " invocations");
    ProfileReport report;
    report.source_tag = "sim";
    for (int i = 0; i < n; ++i) {
        KernelProfile k;
        k.kernel_name = state.kernel_name;
        k.invocation_index = i;
        k.elapsed_cycles = per + (i < rem ? 1 : 0);
        k.metrics = state.metrics;
        k.stall_breakdown = state.stalls;
        report.kernels.push_back(std::move(k));
    }
    return report;
}

inline SyntheticVariant starting_variant(const SyntheticTask& task) {
    SyntheticVariant v;
    v.task_id = task.task_id;
    v.variant_id = task.task_id + "/v0";
    v.current_hidden_state = task.start_state;
    v.cumulative_cycles = task.base_cycles;
    v.cycle_product = 1.0;
    return v;
}

/// Effect-table step. Missing entries are explicit no-ops; failure entries
/// return the corresponding pipeline failure and leave the variant unchanged.
inline std::pair<SyntheticVariant, PipelineOutcome> apply_optimization(const SyntheticTask& task,
                                                                       const SyntheticVariant& variant,
                                                                       const std::string& opt_name) {
    if (variant.task_id != task.task_id)
        throw Error(ErrorCode::UnknownVariant,
                    variant.variant_id + " does not belong to task " + task.task_id);
    const auto* hidden = task.find_hidden(variant.current_hidden_state);
    if (!hidden)
        throw Error(ErrorCode::UnknownVariant,
                    variant.variant_id + ": unknown hidden state " + variant.current_hidden_state);

    PipelineOutcome outcome;
    auto it = task.effect_table.find({variant.current_hidden_state, opt_name});
    if (it != task.effect_table.end() && it->second.failure_mode != FailureMode::None) {
        outcome.variant_id = variant.variant_id + "+" + opt_name;
        if (it->second.failure_mode == FailureMode::Compile) {
            outcome.status = PipelineStatus::CompileFailed;
            outcome.attempts.push_back(
                {"compile", "compilation of optimization '" + opt_name + "' failed"});
        } else {
            outcome.status = PipelineStatus::VerifyFailed;
            outcome.attempts.push_back(
                {"verify", "numerical mismatch after optimization '" + opt_name + "'"});
        }
        return {variant, outcome};
    }

    SyntheticVariant next = variant;
    next.applied_ops.push_back(opt_name);
    next.variant_id = variant.variant_id + "+" + opt_name;
    if (it != task.effect_table.end()) {
        next.cycle_product *= it->second.cycle_factor;
        next.current_hidden_state = it->second.next_state;
    }
    next.cumulative_cycles = scaled_cycles(task.base_cycles, next.cycle_product);

    const auto* next_hidden = task.find_hidden(next.current_hidden_state);
    if (!next_hidden)
        throw Error(ErrorCode::InvalidSpec, task.task_id + ": effect table leads to unknown state " +
                                                next.current_hidden_state);
    outcome.status = PipelineStatus::Profiled;
    outcome.report = emit_report(task, *next_hidden, next.cumulative_cycles);
    outcome.variant_id = next.variant_id;
    return {std::move(next), outcome};
}

// ---------------------------------------------------------------------------
// Brute-force oracle

struct OptimalResult {
    std::vector<std::string> best_factor_chain;
    double best_speedup = 1.0;
    std::int64_t best_cycles = 0;
};

/// Exhaustive search over optimization sequences up to `depth` from the
/// start state. Failure entries cannot be applied; missing entries are
/// no-ops and never help, so only explicit non-failure entries branch.
inline OptimalResult optimal_speedup(const SyntheticTask& task, int depth) {
    if (depth > 8) throw Error(ErrorCode::DepthTooLarge, "exhaustive bound is depth 8");
    if (depth < 0) throw Error(ErrorCode::InvalidSpec, "depth must be >= 0");

    // Explicit usable entries per state, in sorted op order for determinism.
    std::map<std::string, std::vector<std::pair<std::string, const Effect*>>> edges;
    for (const auto& [key, effect] : task.effect_table)
        if (effect.failure_mode == FailureMode::None)
            edges[key.first].emplace_back(key.second, &effect);

    OptimalResult best;
    best.best_cycles = scaled_cycles(task.base_cycles, 1.0);
    std::vector<std::string> sequence;

    auto consider = [&](double product) {
        const std::int64_t cycles = scaled_cycles(task.base_cycles, product);
        if (cycles < best.best_cycles ||
            (cycles == best.best_cycles && (sequence.size() < best.best_factor_chain.size() ||
                                            (sequence.size() == best.best_factor_chain.size() &&
                                             sequence < best.best_factor_chain)))) {
            best.best_cycles = cycles;
            best.best_factor_chain = sequence;
        }
    };

    std::function<void(const std::string&, double, int)> dfs = [&](const std::string& state,
                                                                   double product, int remaining) {
        if (remaining == 0) return;
        auto it = edges.find(state);
        if (it == edges.end()) return;
        for (const auto& [opt, effect] : it->second) {
            sequence.push_back(opt);
            const double next_product = product * effect->cycle_factor;
            consider(next_product);
            dfs(effect->next_state, next_product, remaining - 1);
            sequence.pop_back();
        }
    };
    dfs(task.start_state, 1.0, depth);

    best.best_speedup =
        static_cast<double>(task.baseline_cycles) / static_cast<double>(best.best_cycles);
    return best;
}

namespace detail {

/// Dynamic-programming twin of the exhaustive oracle, used as the
/// generator's internal shape check (and by tests as a second opinion).
inline double optimal_product_dp(const SyntheticTask& task, int depth) {
    std::map<std::string, std::vector<const Effect*>> edges;
    for (const auto& [key, effect] : task.effect_table)
        if (effect.failure_mode == FailureMode::None) edges[key.first].push_back(&effect);

    std::map<std::string, double> current;
    for (const auto& s : task.hidden_states) current[s.name] = 1.0;
    for (int d = 0; d < depth; ++d) {
        std::map<std::string, double> next = current;
        for (const auto& s : task.hidden_states) {
            auto it = edges.find(s.name);
            if (it == edges.end()) continue;
            for (const Effect* e : it->second)
                next[s.name] = std::min(next[s.name], e->cycle_factor * current[e->next_state]);
        }
        current = std::move(next);
    }
    return current[task.start_state];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Task generation

/// Deterministic task generator. Plants one best chain of the requested
/// depth through distinct bottleneck families, surrounds it with no-gain
/// decoys that derail into sink states, and plants one failure entry. The
/// planted chain is strictly better than any shorter sequence and exactly
/// optimal for every depth from the chain length through 8.
inline SyntheticTask make_synthetic_task(std::uint64_t seed, const SimTaskSpecParams& params) {
    using namespace simgen;
    if (params.n_states < 2) throw Error(ErrorCode::InvalidSpec, "n_states must be >= 2");
    if (params.n_opts < 2) throw Error(ErrorCode::InvalidSpec, "n_opts must be >= 2");
    if (params.n_opts > static_cast<int>(kOpPool.size()))
        throw Error(ErrorCode::InvalidSpec, "n_opts exceeds the op pool");
    const int depth = params.depth_of_best_chain;
    if (depth < 1) throw Error(ErrorCode::InvalidSpec, "depth_of_best_chain must be >= 1");
    if (depth > params.n_states - 1)
        throw Error(ErrorCode::InvalidSpec, "chain depth needs n_states >= depth + 1");

    std::vector<const Family*> usable;
    for (const auto& family : kFamilies)
        if (family.chain_op_index < static_cast<std::size_t>(params.n_opts))
            usable.push_back(&family);
    if (static_cast<int>(usable.size()) < depth)
        throw Error(ErrorCode::InvalidSpec,
                    "chain depth " + std::to_string(depth) + " needs more ops than n_opts allows");

    Rng rng(derive_seed(seed, "simenv-task", 0, 0));
    SyntheticTask task;
    task.task_id = "synth_" + std::to_string(seed);
    task.base_cycles = 1000000 + static_cast<std::int64_t>(rng.below(4000001));
    task.baseline_cycles = task.base_cycles;
    for (int i = 0; i < params.n_opts; ++i) task.declared_ops.emplace_back(kOpPool[i]);

    // Seeded family order for the chain.
    for (std::size_t i = usable.size(); i > 1; --i)
        std::swap(usable[i - 1], usable[rng.below(i)]);

    for (int i = 0; i < depth; ++i)
        task.hidden_states.push_back(make_family_state(*usable[i], "s" + std::to_string(i), rng));
    task.hidden_states.push_back(make_balanced_state("s_end", rng));
    for (int i = depth + 1; i < params.n_states; ++i)
        task.hidden_states.push_back(make_balanced_state("sink" + std::to_string(i - depth - 1), rng));
    task.start_state = "s0";

    // Planted chain.
    for (int i = 0; i < depth; ++i) {
        const Family& family = *usable[i];
        Effect effect;
        effect.cycle_factor = rng.uniform_in(family.factor_lo, family.factor_hi);
        effect.next_state = i + 1 < depth ? "s" + std::to_string(i + 1) : "s_end";
        task.effect_table[{"s" + std::to_string(i), std::string(family.chain_op)}] = effect;
    }

    // One failure entry on the start state.
    std::vector<std::string> non_chain_s0;
    for (const auto& op : task.declared_ops)
        if (op != usable[0]->chain_op) non_chain_s0.push_back(op);
    const std::string failure_op = non_chain_s0[rng.below(non_chain_s0.size())];
    Effect failure;
    failure.cycle_factor = 1.0;
    failure.next_state = "s0";
    failure.failure_mode = rng.below(2) == 0 ? FailureMode::Compile : FailureMode::Verify;
    task.effect_table[{"s0", failure_op}] = failure;

    // Decoys: every remaining declared op gets an explicit no-gain entry on
    // each chain state, derailing into a sink. The first decoy is factor
    // exactly 1.0; the rest are mild slowdowns.
    std::vector<std::string> sinks = {"s_end"};
    for (int i = depth + 1; i < params.n_states; ++i)
        sinks.push_back("sink" + std::to_string(i - depth - 1));
    bool first_decoy = true;
    for (int i = 0; i < depth; ++i) {
        const std::string state = "s" + std::to_string(i);
        for (const auto& op : task.declared_ops) {
            if (task.effect_table.count({state, op})) continue;
            Effect decoy;
            decoy.cycle_factor = first_decoy ? 1.0 : rng.uniform_in(1.0, 1.12);
            first_decoy = false;
            decoy.next_state = sinks[rng.below(sinks.size())];
            task.effect_table[{state, op}] = decoy;
        }
    }

    // A little texture on the sinks: a couple of explicit neutral entries;
    // everything else there is a missing-entry no-op.
    for (const auto& sink : sinks) {
        for (int j = 0; j < 2 && j < params.n_opts; ++j) {
            const std::string& op = task.declared_ops[rng.below(task.declared_ops.size())];
            if (task.effect_table.count({sink, op})) continue;
            Effect neutral;
            neutral.cycle_factor = rng.uniform_in(1.0, 1.10);
            neutral.next_state = sink;
            task.effect_table[{sink, op}] = neutral;
        }
    }

    // Generator postconditions.
    for (const auto& state : task.hidden_states) {
        const auto sig = classify_bottleneck(emit_report(task, state, task.base_cycles));
        if (!(sig == state.intended_signature))
            throw Error(ErrorCode::InvalidSpec,
                        task.task_id + ": state " + state.name + " classifies as " +
                            sig.primary_bottleneck + ", intended " +
                            state.intended_signature.primary_bottleneck);
    }
    double previous = 1.0;
    for (int d = 1; d <= depth; ++d) {
        const double product = detail::optimal_product_dp(task, d);
        if (!(product < previous))
            throw Error(ErrorCode::InvalidSpec,
                        task.task_id + ": planted chain not strictly improving at depth " +
                            std::to_string(d));
        previous = product;
    }
    if (detail::optimal_product_dp(task, 8) != previous)
        throw Error(ErrorCode::InvalidSpec, task.task_id + ": sequences beyond the chain improve");
    return task;
}

// ---------------------------------------------------------------------------
// Task dump format

inline nlohmann::json task_to_json(const SyntheticTask& task) {
    nlohmann::json doc;
    doc["format"] = "kernelblaze-simtask-1";
    doc["task_id"] = task.task_id;
    doc["base_cycles"] = task.base_cycles;
    doc["baseline_cycles"] = task.baseline_cycles;
    doc["start_state"] = task.start_state;
    doc["declared_ops"] = task.declared_ops;
    doc["verify_failure_seed_ordinal"] = task.verify_failure_seed_ordinal;
    doc["verification"] = {{"seeds", task.verification.seeds},
                           {"relative_tolerance", task.verification.relative_tolerance},
                           {"absolute_tolerance", task.verification.absolute_tolerance}};
    nlohmann::json states = nlohmann::json::array();
    for (const auto& s : task.hidden_states) {
        nlohmann::json js;
        js["name"] = s.name;
        js["kernel_name"] = s.kernel_name;
        js["invocations"] = s.invocations;
        js["metrics"] = s.metrics;
        js["stalls"] = s.stalls;
        js["signature"] = {{"primary", s.intended_signature.primary_bottleneck},
                           {"secondary", s.intended_signature.secondary_bottleneck
                                             ? nlohmann::json(*s.intended_signature.secondary_bottleneck)
                                             : nlohmann::json()}};
        states.push_back(std::move(js));
    }
    doc["hidden_states"] = std::move(states);
    nlohmann::json effects = nlohmann::json::array();
    for (const auto& [key, effect] : task.effect_table) {
        effects.push_back({{"state", key.first},
                           {"opt", key.second},
                           {"cycle_factor", effect.cycle_factor},
                           {"next_state", effect.next_state},
                           {"failure_mode", std::string(failure_mode_name(effect.failure_mode))}});
    }
    doc["effect_table"] = std::move(effects);
    return doc;
}

inline std::string task_to_json_string(const SyntheticTask& task) {
    return dump_canonical(task_to_json(task), 2);
}

inline SyntheticTask task_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || doc.value("format", "") != "kernelblaze-simtask-1")
        throw Error(ErrorCode::MalformedFile, "not a kernelblaze-simtask-1 document");
    SyntheticTask task;
    task.task_id = detail::get_field<std::string>(doc, "task_id", "$");
    task.base_cycles = detail::get_field<std::int64_t>(doc, "base_cycles", "$");
    task.baseline_cycles = detail::get_field<std::int64_t>(doc, "baseline_cycles", "$");
    task.start_state = detail::get_field<std::string>(doc, "start_state", "$");
    task.declared_ops = detail::get_field<std::vector<std::string>>(doc, "declared_ops", "$");
    task.verify_failure_seed_ordinal = doc.value("verify_failure_seed_ordinal", 1);
    if (doc.contains("verification")) {
        const auto& v = doc.at("verification");
        task.verification.seeds = v.value("seeds", std::vector<std::int64_t>{1, 2, 3});
        task.verification.relative_tolerance = v.value("relative_tolerance", 1e-2);
        task.verification.absolute_tolerance = v.value("absolute_tolerance", 1e-3);
    }
    for (const auto& js : doc.value("hidden_states", nlohmann::json::array())) {
        HiddenState s;
        s.name = detail::get_field<std::string>(js, "name", "$.hidden_states");
        s.kernel_name = js.value("kernel_name", "main_kernel");
        s.invocations = js.value("invocations", 4);
        if (js.contains("metrics"))
            s.metrics = js.at("metrics").get<std::map<std::string, double>>();
        if (js.contains("stalls")) s.stalls = js.at("stalls").get<std::map<std::string, double>>();
        if (js.contains("signature")) {
            s.intended_signature.primary_bottleneck = js.at("signature").value("primary", "balanced");
            if (js.at("signature").contains("secondary") && !js.at("signature").at("secondary").is_null())
                s.intended_signature.secondary_bottleneck =
                    js.at("signature").at("secondary").get<std::string>();
        }
        task.hidden_states.push_back(std::move(s));
    }
    for (const auto& je : doc.value("effect_table", nlohmann::json::array())) {
        Effect effect;
        effect.cycle_factor = detail::get_field<double>(je, "cycle_factor", "$.effect_table");
        effect.next_state = detail::get_field<std::string>(je, "next_state", "$.effect_table");
        const std::string mode = je.value("failure_mode", "none");
        effect.failure_mode = mode == "compile" ? FailureMode::Compile
                              : mode == "verify" ? FailureMode::Verify
                                                 : FailureMode::None;
        task.effect_table[{detail::get_field<std::string>(je, "state", "$.effect_table"),
                           detail::get_field<std::string>(je, "opt", "$.effect_table")}] = effect;
    }
    if (task.hidden_states.empty() || !task.find_hidden(task.start_state))
        throw Error(ErrorCode::MalformedFile, "task dump has no usable start state");
    return task;
}

inline SyntheticTask load_synthetic_task(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::MalformedFile, path + ": " + e.what());
    }
    return task_from_json(doc);
}

// ---------------------------------------------------------------------------
// Execution backend over synthetic tasks

/// Deterministic ExecutionBackend: variants are JSON manifests of applied
/// optimizations, replayed against the effect table.
class SimBackend final : public ExecutionBackend {
public:
    explicit SimBackend(std::vector<SyntheticTask> tasks) {
        for (auto& task : tasks) {
            const std::string id = task.task_id;
            tasks_.emplace(id, std::move(task));
        }
    }

    static std::string variant_code(const std::string& task_id,
                                    const std::vector<std::string>& applied_ops) {
        nlohmann::json doc{{"applied_ops", applied_ops}, {"task_id", task_id}};
        return dump_canonical(doc);
    }

    const SyntheticTask& task(const std::string& task_id) const {
        auto it = tasks_.find(task_id);
        if (it == tasks_.end())
            throw Error(ErrorCode::BackendError, "unknown synthetic task " + task_id);
        return it->second;
    }

    TaskSpec task_spec(const std::string& task_id) const {
        const SyntheticTask& t = task(task_id);
        TaskSpec spec;
        spec.task_id = t.task_id;
        spec.level = 2;
        spec.baseline_cycles = t.baseline_cycles;
        spec.verification = t.verification;
        spec.declared_ops = t.declared_ops;
        spec.reference_variant = {t.task_id + "/reference", variant_code(t.task_id, {}),
                                  t.declared_ops};
        spec.starting_variant = {t.task_id + "/v0", variant_code(t.task_id, {}), t.declared_ops};
        return spec;
    }

    /// Mechanical lowering: synthetic variants are manifests, so applying an
    /// optimization appends it. Feedback never changes the result; broken
    /// effects stay broken, which is what exhausts repair budgets.
    Variant lower(const TaskSpec& task_spec_in, const Variant& current,
                  const std::string& opt_name) const {
        Replay replay_state = replay_or_throw(current);
        std::vector<std::string> ops = replay_state.applied_ops;
        ops.push_back(opt_name);
        Variant next;
        next.variant_id = current.variant_id + "+" + opt_name;
        next.code = variant_code(task_spec_in.task_id, ops);
        next.declared_ops = current.declared_ops;
        return next;
    }

    CompileResult compile(const Variant& variant) override {
        auto replayed = try_replay(variant);
        if (!replayed)
            return {false, "unrecognized variant manifest (expected a JSON applied_ops document)"};
        if (replayed->failure == FailureMode::Compile)
            return {false, "compilation of optimization '" + replayed->failed_op + "' failed"};
        return {};
    }

    std::vector<double> execute(const Variant& variant, std::int64_t seed) override {
        auto replayed = try_replay(variant);
        if (!replayed)
            throw Error(ErrorCode::BackendError, "execute called on uncompilable variant");
        const SyntheticTask& t = task(replayed->task_id);
        std::vector<double> outputs = reference_outputs(t.task_id, seed);
        if (replayed->failure == FailureMode::Verify) {
            const std::size_t ordinal =
                std::min<std::size_t>(static_cast<std::size_t>(t.verify_failure_seed_ordinal),
                                      t.verification.seeds.size() - 1);
            if (seed == t.verification.seeds[ordinal] && !outputs.empty()) outputs[0] += 1.0;
        }
        return outputs;
    }

    ProfileReport profile(const Variant& variant) override {
        auto replayed = try_replay(variant);
        if (!replayed || replayed->failure != FailureMode::None)
            throw Error(ErrorCode::BackendError,
                        "profile requested for a variant that cannot pass the pipeline");
        const SyntheticTask& t = task(replayed->task_id);
        const auto* hidden = t.find_hidden(replayed->state);
        return emit_report(t, *hidden, scaled_cycles(t.base_cycles, replayed->product));
    }

    std::int64_t baseline(const TaskSpec& task_spec_in) override {
        return task(task_spec_in.task_id).baseline_cycles;
    }

    std::string name() const override { return "sim"; }

private:
    struct Replay {
        std::string task_id;
        std::vector<std::string> applied_ops;
        std::string state;
        double product = 1.0;
        FailureMode failure = FailureMode::None;
        std::string failed_op;
    };

    std::optional<Replay> try_replay(const Variant& variant) const {
        nlohmann::json doc = nlohmann::json::parse(variant.code, nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("task_id") ||
            !doc.contains("applied_ops") || !doc.at("applied_ops").is_array())
            return std::nullopt;
        const std::string task_id = doc.value("task_id", "");
        auto it = tasks_.find(task_id);
        if (it == tasks_.end()) return std::nullopt;
        const SyntheticTask& t = it->second;

        Replay replayed;
        replayed.task_id = task_id;
        replayed.state = t.start_state;
        for (const auto& jop : doc.at("applied_ops")) {
            if (!jop.is_string()) return std::nullopt;
            const std::string op = jop.get<std::string>();
            replayed.applied_ops.push_back(op);
            auto effect = t.effect_table.find({replayed.state, op});
            if (effect == t.effect_table.end()) continue;
            if (effect->second.failure_mode != FailureMode::None) {
                replayed.failure = effect->second.failure_mode;
                replayed.failed_op = op;
                break;
            }
            replayed.product *= effect->second.cycle_factor;
            replayed.state = effect->second.next_state;
        }
        return replayed;
    }

    Replay replay_or_throw(const Variant& variant) const {
        auto replayed = try_replay(variant);
        if (!replayed)
            throw Error(ErrorCode::BackendError, "variant manifest does not replay: " +
                                                     variant.variant_id);
        return *replayed;
    }

    std::vector<double> reference_outputs(const std::string& task_id, std::int64_t seed) const {
        Rng rng(derive_seed(0x5EED, task_id, static_cast<std::uint64_t>(seed), 0));
        std::vector<double> outputs(8);
        for (auto& v : outputs) v = rng.uniform_in(-1.0, 1.0);
        return outputs;
    }

    std::map<std::string, SyntheticTask> tasks_;
};

} // namespace kblaze

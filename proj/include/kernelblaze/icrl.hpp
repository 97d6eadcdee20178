#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kernelblaze/agents.hpp"
#include "kernelblaze/canonical_json.hpp"
#include "kernelblaze/harness.hpp"
#include "kernelblaze/knowledge_base.hpp"
#include "kernelblaze/policy.hpp"
#include "kernelblaze/profile.hpp"
#include "kernelblaze/state_engine.hpp"

namespace kblaze {

// ---------------------------------------------------------------------------
// Rollout records

enum class StepOutcome { Accepted, Rejected };

struct RolloutStep {
    int step_index = 0;
    PerformanceSignature signature;
    std::string state_id;             // matched or provisional (discovered) id
    bool state_discovered = false;
    std::string source_variant_id;    // s_t
    std::string opt_id;               // a_t
    std::string produced_variant_id;  // becomes s_{t+1} when accepted
    double predicted_gain_at_selection = 1.0;
    double reward = 0.0;              // rejected steps carry 0
    StepOutcome outcome = StepOutcome::Rejected;
    std::string reject_reason;
    std::string profile_ref;
};

struct ProposalRecord {
    std::string state_id;
    OptimizationEntry entry;
};

struct Trajectory {
    std::string task_id;
    std::uint64_t seed = 0;
    int trajectory_index = 0;
    std::vector<RolloutStep> steps;
    double total_return = 0.0;        // R(tau): baseline speedup of the best accepted variant
    std::string final_variant_id;     // the variant that realizes the return
    bool aborted_backend = false;
    std::vector<PerformanceState> discovered_states;
    std::vector<ProposalRecord> proposals;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    int pipeline_attempts = 0;
};

struct ReplayBuffer {
    struct Entry {
        Trajectory trajectory;
        double total_return = 0.0;
        int iteration = 0;
    };
    std::vector<Entry> entries; // append-only within an iteration

    void store(Trajectory trajectory, int iteration) {
        const double r = trajectory.total_return;
        entries.push_back({std::move(trajectory), r, iteration});
    }
};

// ---------------------------------------------------------------------------
// Textual-gradient intermediates

struct GapItem {
    std::string state_id;
    std::string opt_id;
    double predicted_gain = 1.0;
    std::vector<double> observed_gains; // rejected observations contribute 0
    double discrepancy = 0.0;           // mean(observed) - predicted
};

struct GapSummary {
    std::vector<GapItem> items;
};

struct ScoreUpdate {
    std::string state_id;
    std::string opt_id;
    double observed_gain_mean = 0.0;
};

struct AnalysisReport {
    std::vector<ScoreUpdate> score_updates;
    std::vector<std::pair<std::string, OptimizationEntry>> new_optimizations;
    std::vector<PerformanceState> new_states;
    std::string rationale;
};

struct IcrlConfig {
    int iterations = 10;
    int rollout_steps = 10;         // T
    int trajectories_per_task = 8;
    int top_k = 4;
    double alpha = kDefaultAlpha;
    std::uint64_t run_seed = 0;
    int jobs = 0;                   // 0 = hardware concurrency
    bool kb_persistence = true;     // false = ablation, reset KB each iteration
    bool live_extractor = false;
    bool live_gap_analysis = false;
    bool live_soft_verifier = false;
    PolicyConfig policy;
    ClassifierConfig classifier;
    RetryBudget retries;
    Clock clock;

    void validate() const {
        if (iterations < 0 || rollout_steps < 0 || trajectories_per_task < 1 || top_k < 1)
            throw Error(ErrorCode::InvalidSpec, "iteration/rollout/trajectory counts must be positive");
        if (!(alpha > 0.0 && alpha <= 1.0))
            throw Error(ErrorCode::InvalidSpec, "alpha must be in (0, 1]");
    }
};

// ---------------------------------------------------------------------------
// Lowering providers

class LoweringProvider {
public:
    virtual ~LoweringProvider() = default;
    virtual Variant lower(const TaskSpec& task, const Variant& current,
                          const OptimizationEntry& opt, const ProfileReport& report,
                          const std::string& feedback, TokenCounter* tokens) = 0;
};

/// Agent-backed lowering: renders the lowering prompt and extracts the
/// rewritten code block. Unparseable responses are returned verbatim so the
/// pipeline's compile stage rejects them and drives the repair loop.
class AgentLowering final : public LoweringProvider {
public:
    explicit AgentLowering(Agent& agent) : agent_(agent) {}

    Variant lower(const TaskSpec& task, const Variant& current, const OptimizationEntry& opt,
                  const ProfileReport& report, const std::string& feedback,
                  TokenCounter* tokens) override {
        AgentRequest request;
        request.role = AgentRole::Lowering;
        request.response_schema_id = "code_block";
        std::string summary = render_profile_summary(report);
        if (!feedback.empty()) summary += "\nprevious attempt failed: " + feedback;
        request.rendered_prompt = render_prompt(AgentRole::Lowering, {{"code", current.code},
                                                                      {"optimization", opt.name},
                                                                      {"profile_summary", summary}});
        AgentResponse response = agent_.complete(request);
        if (tokens) tokens->add(AgentRole::Lowering, response);
        Variant next;
        next.variant_id = current.variant_id + "+" + opt.opt_id;
        next.declared_ops = current.declared_ops;
        try {
            next.code = parse_code_block(response.text);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ParseFailure) throw;
            next.code = response.text;
        }
        (void)task;
        return next;
    }

private:
    Agent& agent_;
};

// ---------------------------------------------------------------------------
// Rollouts

struct RolloutContext {
    ExecutionBackend& backend;
    LoweringProvider& lowering;
    Agent* agent = nullptr;          // proposer / extractor roles; may be null
    Agent* soft_verifier = nullptr;  // null = deterministic lint
    const IcrlConfig& config;
};

namespace detail {

inline std::string provisional_state_id(const PerformanceSignature& sig) {
    std::string id = sig.primary_bottleneck;
    if (sig.secondary_bottleneck) id += "__" + *sig.secondary_bottleneck;
    return id;
}

inline std::string pretty_label(std::string_view slug) {
    std::string out;
    bool upper = true;
    for (char c : slug) {
        if (c == '_' || c == '-') {
            out.push_back(' ');
            upper = true;
        } else {
            out.push_back(upper && c >= 'a' && c <= 'z' ? static_cast<char>(c - 'a' + 'A') : c);
            upper = false;
        }
    }
    return out;
}

inline PerformanceState state_from_signature(const PerformanceSignature& sig) {
    PerformanceState state;
    state.state_id = provisional_state_id(sig);
    state.display_name = pretty_label(sig.primary_bottleneck);
    if (sig.secondary_bottleneck) state.display_name += " + " + pretty_label(*sig.secondary_bottleneck);
    state.primary_bottleneck = sig.primary_bottleneck;
    state.secondary_bottleneck = sig.secondary_bottleneck;
    state.description = "Discovered from profiling; primary bottleneck " + sig.primary_bottleneck +
                        (sig.secondary_bottleneck ? ", secondary " + *sig.secondary_bottleneck : "") +
                        ".";
    return state;
}

} // namespace detail

/// One strategy-guided rollout of at most T steps against a frozen KB
/// snapshot. Discovered states and fresh proposals live in a local working
/// copy and are recorded on the trajectory for the iteration-boundary
/// parameter update. All randomness derives from
/// (run_seed, task_id, trajectory_index, step).
inline Trajectory run_rollout(const TaskSpec& task, const KnowledgeBase& kb_snapshot,
                              RolloutContext& ctx, int trajectory_index) {
    const IcrlConfig& config = ctx.config;
    Trajectory trajectory;
    trajectory.task_id = task.task_id;
    trajectory.trajectory_index = trajectory_index;
    trajectory.seed = derive_seed(config.run_seed, task.task_id,
                                  static_cast<std::uint64_t>(trajectory_index), 0);

    TokenCounter tokens;
    KnowledgeBase local_kb = kb_snapshot; // snapshot isolation: mutations stay local

    std::int64_t baseline =
        task.baseline_cycles > 0 ? task.baseline_cycles : ctx.backend.baseline(task);

    Variant current_variant = task.starting_variant;
    ProfileReport current_report;
    try {
        current_report = ctx.backend.profile(current_variant);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::BackendError) throw;
        trajectory.aborted_backend = true;
        return trajectory;
    }

    double best_speedup = speedup_vs_baseline(baseline, current_report);
    std::string best_variant_id = current_variant.variant_id;

    std::deque<OptimizationEntry> queue;
    for (int t = 0; t < config.rollout_steps; ++t) {
        PerformanceSignature signature =
            (config.live_extractor && ctx.agent)
                ? extract_signature_live(*ctx.agent, current_report, current_variant.code,
                                         config.classifier, &tokens)
                : classify_bottleneck(current_report, config.classifier);

        MatchResult matched = lookup_state(local_kb, signature);
        std::string state_id;
        bool discovered = false;
        if (matched.known) {
            state_id = matched.state_id;
        } else {
            PerformanceState fresh = detail::state_from_signature(signature);
            if (!local_kb.find_state(fresh.state_id)) {
                add_state(local_kb, fresh, config.clock);
                trajectory.discovered_states.push_back(fresh);
            }
            state_id = fresh.state_id;
            discovered = true;
        }

        std::vector<OptimizationEntry> candidates = candidate_set(local_kb, state_id);
        if (candidates.empty()) {
            if (!ctx.agent) break; // deterministic mode cannot mint candidates
            std::vector<OptimizationEntry> proposals;
            try {
                proposals = propose_new_optimizations(*ctx.agent, *local_kb.find_state(state_id),
                                                      current_report, config.policy, nullptr,
                                                      &tokens);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::EmptyProposal && e.code() != ErrorCode::ScriptExhausted)
                    throw;
                break;
            }
            for (const auto& entry : proposals) {
                if (local_kb.find_state(state_id)->find_optimization(entry.opt_id)) continue;
                add_optimization(local_kb, state_id, entry, config.clock);
                trajectory.proposals.push_back({state_id, entry});
            }
            candidates = candidate_set(local_kb, state_id);
            if (candidates.empty()) break;
        }

        if (queue.empty()) {
            auto picked = weighted_top_k(
                candidates, config.top_k,
                derive_seed(config.run_seed, task.task_id,
                            static_cast<std::uint64_t>(trajectory_index),
                            static_cast<std::uint64_t>(t) + 1),
                config.policy.epsilon);
            queue.assign(picked.begin(), picked.end());
        }
        OptimizationEntry chosen = queue.front();
        queue.pop_front();

        RolloutStep step;
        step.step_index = t;
        step.signature = signature;
        step.state_id = state_id;
        step.state_discovered = discovered;
        step.source_variant_id = current_variant.variant_id;
        step.opt_id = chosen.opt_id;
        step.predicted_gain_at_selection = chosen.predicted_gain;

        Variant candidate_variant =
            ctx.lowering.lower(task, current_variant, chosen, current_report, "", &tokens);
        RepairFn repair = [&](const std::string&, const std::string& feedback,
                              const Variant&) -> std::optional<Variant> {
            return ctx.lowering.lower(task, current_variant, chosen, current_report, feedback,
                                      &tokens);
        };
        PipelineOutcome outcome =
            run_pipeline(std::move(candidate_variant), task, ctx.backend, task.verification,
                         config.retries, repair,
                         config.live_soft_verifier ? ctx.soft_verifier : nullptr, &tokens);
        trajectory.pipeline_attempts += 1;
        step.produced_variant_id = outcome.variant_id;
        step.profile_ref = task.task_id + "/t" + std::to_string(trajectory_index) + "/s" +
                           std::to_string(t);

        if (outcome.status == PipelineStatus::BackendError) {
            trajectory.aborted_backend = true;
            trajectory.steps.push_back(std::move(step));
            break;
        }
        if (outcome.status == PipelineStatus::Profiled) {
            step.outcome = StepOutcome::Accepted;
            step.reward = compute_reward(current_report, *outcome.report);
            current_variant = outcome.final_variant;
            current_report = *outcome.report;
            queue.clear(); // the state changed; re-select against it
            const double speedup = speedup_vs_baseline(baseline, current_report);
            if (speedup > best_speedup) {
                best_speedup = speedup;
                best_variant_id = current_variant.variant_id;
            }
        } else {
            step.outcome = StepOutcome::Rejected;
            step.reward = 0.0;
            step.reject_reason = std::string(pipeline_status_name(outcome.status));
            if (!outcome.attempts.empty())
                step.reject_reason += ": " + outcome.attempts.back().feedback;
        }
        trajectory.steps.push_back(std::move(step));
    }

    trajectory.total_return = best_speedup;
    trajectory.final_variant_id = best_variant_id;
    trajectory.prompt_tokens = tokens.prompt_tokens;
    trajectory.completion_tokens = tokens.completion_tokens;
    return trajectory;
}

// ---------------------------------------------------------------------------
// Policy evaluation (g_k)

/// Groups this iteration's steps by (state, optimization). Rejected
/// observations enter the gain list as 0 but are excluded from the mean when
/// any accepted observation exists; pure-failure entries use mean 0.
inline GapSummary policy_evaluation(const ReplayBuffer& buffer, const KnowledgeBase& kb,
                                    int iteration) {
    std::map<std::pair<std::string, std::string>, GapItem> grouped;
    for (const auto& entry : buffer.entries) {
        if (entry.iteration != iteration) continue;
        for (const auto& step : entry.trajectory.steps) {
            auto key = std::make_pair(step.state_id, step.opt_id);
            auto [it, fresh] = grouped.try_emplace(key);
            if (fresh) {
                it->second.state_id = step.state_id;
                it->second.opt_id = step.opt_id;
                const PerformanceState* state = kb.find_state(step.state_id);
                const OptimizationEntry* opt =
                    state ? state->find_optimization(step.opt_id) : nullptr;
                it->second.predicted_gain =
                    opt ? opt->predicted_gain : step.predicted_gain_at_selection;
            }
            it->second.observed_gains.push_back(
                step.outcome == StepOutcome::Accepted ? step.reward : 0.0);
        }
    }
    GapSummary summary;
    for (auto& [key, item] : grouped) {
        double sum = 0.0;
        int accepted = 0;
        for (double gain : item.observed_gains) {
            if (gain > 0.0) {
                sum += gain;
                ++accepted;
            }
        }
        const double mean = accepted > 0 ? sum / accepted : 0.0;
        item.discrepancy = mean - item.predicted_gain;
        summary.items.push_back(std::move(item));
    }
    return summary;
}

inline double gap_observed_mean(const GapItem& item) {
    double sum = 0.0;
    int accepted = 0;
    for (double gain : item.observed_gains) {
        if (gain > 0.0) {
            sum += gain;
            ++accepted;
        }
    }
    return accepted > 0 ? sum / accepted : 0.0;
}

inline std::string render_gap_table(const GapSummary& gap) {
    std::string out = "state,optimization,predicted_gain,observed_mean,observations,discrepancy\n";
    for (const auto& item : gap.items)
        out += item.state_id + "," + item.opt_id + "," + format_float6(item.predicted_gain) + "," +
               format_float6(gap_observed_mean(item)) + "," +
               std::to_string(item.observed_gains.size()) + "," + format_float6(item.discrepancy) +
               "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Performance-gap analysis (p_k)

/// Deterministic mode mirrors observed means into score updates with a
/// templated rationale. A live agent may additionally contribute new states
/// and optimizations; invalid items are dropped with a logged event, and any
/// agent failure degrades to the deterministic result.
inline AnalysisReport perf_gap_analysis(const GapSummary& gap, Agent* agent = nullptr,
                                        EventLog* events = nullptr, TokenCounter* tokens = nullptr) {
    AnalysisReport report;
    int above = 0, below = 0;
    for (const auto& item : gap.items) {
        report.score_updates.push_back({item.state_id, item.opt_id, gap_observed_mean(item)});
        (item.discrepancy >= 0 ? above : below) += 1;
    }
    report.rationale = "Evaluated " + std::to_string(gap.items.size()) +
                       " state-optimization pairs: " + std::to_string(above) +
                       " met or beat their predicted gain, " + std::to_string(below) +
                       " fell short.";
    if (!agent || gap.items.empty()) return report;

    try {
        AgentRequest request;
        request.role = AgentRole::PerfGapAnalysis;
        request.response_schema_id = "analysis_report";
        request.rendered_prompt =
            render_prompt(AgentRole::PerfGapAnalysis, {{"gap_summary", render_gap_table(gap)}});
        AgentResponse response = agent->complete(request);
        if (tokens) tokens->add(AgentRole::PerfGapAnalysis, response);
        nlohmann::json doc = parse_first_json(response.text);
        if (!doc.is_object()) return report;

        for (const auto& js : doc.value("new_states", nlohmann::json::array())) {
            if (!js.is_object() || !js.contains("primary_bottleneck")) {
                if (events) events->warn("analysis_dropped", "new_states item malformed");
                continue;
            }
            PerformanceState state;
            state.display_name = js.value("display_name", "");
            state.state_id = js.value("state_id", slugify(state.display_name));
            state.primary_bottleneck =
                normalize_bottleneck_label(js.value("primary_bottleneck", ""));
            if (js.contains("secondary_bottleneck") && js.at("secondary_bottleneck").is_string())
                state.secondary_bottleneck =
                    normalize_bottleneck_label(js.at("secondary_bottleneck").get<std::string>());
            state.description = js.value("description", "");
            if (!is_slug_text(state.state_id)) {
                if (events) events->warn("analysis_dropped", "new state id not a slug");
                continue;
            }
            report.new_states.push_back(std::move(state));
        }
        for (const auto& jo : doc.value("new_optimizations", nlohmann::json::array())) {
            if (!jo.is_object() || !jo.contains("state_id") || !jo.contains("name")) {
                if (events) events->warn("analysis_dropped", "new_optimizations item malformed");
                continue;
            }
            const std::string state_id = jo.value("state_id", "");
            bool resolvable = false;
            for (const auto& s : report.new_states) resolvable |= s.state_id == state_id;
            if (!resolvable) {
                // Will be checked against the KB by the caller via a probe.
                resolvable = jo.value("known_state", false);
            }
            OptimizationEntry entry;
            entry.name = jo.value("name", "");
            entry.opt_id = slugify(entry.name);
            entry.description = jo.value("description", "");
            entry.predicted_gain = jo.value("predicted_gain", 1.0);
            if (entry.opt_id.empty() || entry.predicted_gain <= 0.0) {
                if (events) events->warn("analysis_dropped", "new optimization malformed");
                continue;
            }
            report.new_optimizations.emplace_back(state_id, std::move(entry));
        }
        const std::string rationale = doc.value("rationale", "");
        if (!rationale.empty()) report.rationale = rationale;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::AgentUnavailable && e.code() != ErrorCode::ParseFailure &&
            e.code() != ErrorCode::ScriptExhausted)
            throw;
        if (events) events->info("analysis_degraded", "gap analysis agent unavailable; deterministic mode");
    }
    return report;
}

// ---------------------------------------------------------------------------
// Parameter update (theta_{k+1})

/// Applies new states, then new optimizations, then score EMAs, and
/// re-validates. On any schema violation the input KB is left untouched and
/// the error surfaces. Items referencing states unknown to both the KB and
/// the report are dropped with an event.
inline KnowledgeBase parameter_update(const KnowledgeBase& kb, const AnalysisReport& analysis,
                                      double alpha = kDefaultAlpha,
                                      const Clock& clock = Clock::realtime(),
                                      EventLog* events = nullptr) {
    KnowledgeBase next = kb;
    for (const auto& state : analysis.new_states) {
        if (next.find_state(state.state_id)) continue; // already known
        add_state(next, state, clock);
    }
    for (const auto& [state_id, entry] : analysis.new_optimizations) {
        auto* state = next.find_state(state_id);
        if (!state) {
            if (events)
                events->warn("update_dropped",
                             "optimization '" + entry.opt_id + "' targets unknown state '" +
                                 state_id + "'");
            continue;
        }
        if (state->find_optimization(entry.opt_id)) continue;
        add_optimization(next, state_id, entry, clock);
    }
    for (const auto& update : analysis.score_updates) {
        auto* state = next.find_state(update.state_id);
        if (!state)
            throw Error(ErrorCode::SchemaViolation,
                        "score update references unknown state " + update.state_id);
        auto* opt = state->find_optimization(update.opt_id);
        if (!opt)
            throw Error(ErrorCode::SchemaViolation,
                        "score update references unknown optimization " + update.opt_id);
        detail::apply_ema(next, *state, *opt, update.observed_gain_mean, alpha, clock);
    }
    next.update_count += 1;
    next.updated_at = clock.now_rfc3339();
    validate_kb(next);
    return next;
}

// ---------------------------------------------------------------------------
// Iterations

struct TaskBest {
    std::string task_id;
    double best_speedup = 0.0;
    std::string best_variant_id;
};

struct IterationResult {
    int iteration = 0;
    std::vector<Trajectory> trajectories; // normalized (task, trajectory_index) order
    GapSummary gap_summary;
    AnalysisReport analysis;
    std::map<std::string, TaskBest> best_so_far;
    std::vector<std::string> backend_error_tasks;
    TokenCounter tokens;
};

namespace detail {

inline std::vector<Trajectory> run_trajectories(const std::vector<TaskSpec>& tasks,
                                                const KnowledgeBase& snapshot, RolloutContext& ctx,
                                                int trajectories_per_task) {
    struct Job {
        std::size_t task_index;
        int trajectory_index;
    };
    std::vector<Job> jobs;
    for (std::size_t ti = 0; ti < tasks.size(); ++ti)
        for (int k = 0; k < trajectories_per_task; ++k) jobs.push_back({ti, k});

    std::vector<Trajectory> results(jobs.size());
    const bool sequential = (ctx.agent && ctx.agent->sequential_only()) || ctx.config.jobs == 1;
    int workers = ctx.config.jobs > 0 ? ctx.config.jobs
                                      : static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    if (int cap = ctx.backend.max_concurrent_sessions(); cap > 0) workers = std::min(workers, cap);

    if (sequential || workers == 1 || jobs.size() <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i)
            results[i] = run_rollout(tasks[jobs[i].task_index], snapshot, ctx,
                                     jobs[i].trajectory_index);
    } else {
        std::atomic<std::size_t> cursor{0};
        auto worker = [&] {
            while (true) {
                const std::size_t i = cursor.fetch_add(1);
                if (i >= jobs.size()) return;
                results[i] =
                    run_rollout(tasks[jobs[i].task_index], snapshot, ctx, jobs[i].trajectory_index);
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < std::min<int>(workers, static_cast<int>(jobs.size())); ++w)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Normalize by (task_id, trajectory_index) so scheduling cannot leak
    // into downstream results.
    std::stable_sort(results.begin(), results.end(), [](const Trajectory& a, const Trajectory& b) {
        if (a.task_id != b.task_id) return a.task_id < b.task_id;
        return a.trajectory_index < b.trajectory_index;
    });
    return results;
}

} // namespace detail

/// One outer-loop iteration: frozen-snapshot rollouts for every task, replay
/// buffer storage, policy evaluation, gap analysis, and the serial parameter
/// update. Backend failures are aggregated per task and never abort peers.
inline std::pair<KnowledgeBase, IterationResult> run_iteration(
    const std::vector<TaskSpec>& tasks, const KnowledgeBase& kb, RolloutContext& ctx,
    int iteration_index, ReplayBuffer& buffer,
    std::map<std::string, TaskBest>* best_so_far = nullptr, EventLog* events = nullptr) {
    ctx.config.validate();
    IterationResult result;
    result.iteration = iteration_index;
    if (best_so_far) result.best_so_far = *best_so_far;
    if (tasks.empty()) return {kb, result};

    result.trajectories =
        detail::run_trajectories(tasks, kb, ctx, ctx.config.trajectories_per_task);

    for (const auto& trajectory : result.trajectories) {
        if (trajectory.aborted_backend) {
            if (std::find(result.backend_error_tasks.begin(), result.backend_error_tasks.end(),
                          trajectory.task_id) == result.backend_error_tasks.end())
                result.backend_error_tasks.push_back(trajectory.task_id);
        }
        TokenCounter t;
        t.prompt_tokens = trajectory.prompt_tokens;
        t.completion_tokens = trajectory.completion_tokens;
        result.tokens.prompt_tokens += t.prompt_tokens;
        result.tokens.completion_tokens += t.completion_tokens;
        auto& best = result.best_so_far[trajectory.task_id];
        if (best.task_id.empty()) best.task_id = trajectory.task_id;
        if (trajectory.total_return > best.best_speedup) {
            best.best_speedup = trajectory.total_return;
            best.best_variant_id = trajectory.final_variant_id;
        }
        buffer.store(trajectory, iteration_index);
    }

    result.gap_summary = policy_evaluation(buffer, kb, iteration_index);
    result.analysis = perf_gap_analysis(result.gap_summary,
                                        ctx.config.live_gap_analysis ? ctx.agent : nullptr, events);

    // Register the rollouts' mechanical discoveries ahead of any agent
    // contributions: states first, then the proposals recorded for them.
    std::vector<PerformanceState> discovered;
    std::vector<std::pair<std::string, OptimizationEntry>> proposed;
    for (const auto& trajectory : result.trajectories) {
        for (const auto& state : trajectory.discovered_states) {
            bool seen = kb.find_state(state.state_id) != nullptr;
            for (const auto& existing : discovered) seen |= existing.state_id == state.state_id;
            if (!seen) discovered.push_back(state);
        }
        for (const auto& proposal : trajectory.proposals) {
            bool seen = false;
            if (const auto* state = kb.find_state(proposal.state_id))
                seen = state->find_optimization(proposal.entry.opt_id) != nullptr;
            for (const auto& [sid, entry] : proposed)
                seen |= sid == proposal.state_id && entry.opt_id == proposal.entry.opt_id;
            if (!seen) proposed.emplace_back(proposal.state_id, proposal.entry);
        }
    }
    result.analysis.new_states.insert(result.analysis.new_states.begin(), discovered.begin(),
                                      discovered.end());
    result.analysis.new_optimizations.insert(result.analysis.new_optimizations.begin(),
                                             proposed.begin(), proposed.end());

    KnowledgeBase updated =
        parameter_update(kb, result.analysis, ctx.config.alpha, ctx.config.clock, events);
    if (best_so_far) *best_so_far = result.best_so_far;
    return {std::move(updated), std::move(result)};
}

// ---------------------------------------------------------------------------
// Whole runs

struct TaskProgressPoint {
    std::int64_t attempt = 0; // cumulative pipeline attempts for the task
    double best_speedup = 0.0;
};

struct RunResult {
    KnowledgeBase kb;
    std::vector<IterationResult> iterations;
    std::map<std::string, TaskBest> best;
    std::map<std::string, std::vector<TaskProgressPoint>> progress;
    std::map<std::string, bool> task_backend_error;
    TokenCounter tokens;
    EventLog events;
    bool any_backend_error = false;
};

/// The full Algorithm-2 style loop. With kb_persistence disabled the KB is
/// reset to its initial value at each iteration boundary (the empty-memory
/// ablation); best-so-far measurement is unaffected.
inline RunResult run_loop(const std::vector<TaskSpec>& tasks, const KnowledgeBase& initial_kb,
                          RolloutContext& ctx) {
    ctx.config.validate();
    RunResult run;
    KnowledgeBase kb = initial_kb;
    ReplayBuffer buffer;
    std::map<std::string, TaskBest> best_so_far;
    std::map<std::string, std::int64_t> attempts;

    for (const auto& task : tasks) run.task_backend_error[task.task_id] = false;

    for (int k = 0; k < ctx.config.iterations; ++k) {
        if (!ctx.config.kb_persistence && k > 0) kb = initial_kb;
        auto [updated, result] = run_iteration(tasks, kb, ctx, k, buffer, &best_so_far, &run.events);
        kb = std::move(updated);

        for (const auto& trajectory : result.trajectories) {
            auto& n = attempts[trajectory.task_id];
            auto& series = run.progress[trajectory.task_id];
            const double prev_best = series.empty() ? 0.0 : series.back().best_speedup;
            n += trajectory.pipeline_attempts;
            const double new_best = std::max(prev_best, trajectory.total_return);
            if (series.empty() || new_best > prev_best) series.push_back({n, new_best});
            if (trajectory.aborted_backend) run.task_backend_error[trajectory.task_id] = true;
        }
        run.tokens.merge(result.tokens);
        run.iterations.push_back(std::move(result));
    }
    run.best = best_so_far;
    run.kb = std::move(kb);
    for (const auto& [task_id, failed] : run.task_backend_error) run.any_backend_error |= failed;
    return run;
}

// ---------------------------------------------------------------------------
// Trajectory log records

/// One line-delimited record per trajectory, canonical formatting throughout.
inline std::string trajectory_record(const Trajectory& trajectory, std::uint64_t run_seed,
                                     int iteration, double best_speedup_so_far) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& step : trajectory.steps) {
        nlohmann::json js;
        js["step"] = step.step_index;
        js["state_id"] = step.state_id;
        js["opt_id"] = step.opt_id;
        js["reward"] = step.reward;
        js["outcome"] = step.outcome == StepOutcome::Accepted ? "accepted" : "rejected";
        js["reason"] = step.reject_reason;
        js["produced_variant"] = step.produced_variant_id;
        steps.push_back(std::move(js));
    }
    nlohmann::json doc;
    doc["run_seed"] = run_seed;
    doc["iteration"] = iteration;
    doc["task_id"] = trajectory.task_id;
    doc["trajectory_index"] = trajectory.trajectory_index;
    doc["steps"] = std::move(steps);
    doc["R"] = trajectory.total_return;
    doc["best_speedup"] = best_speedup_so_far;
    doc["prompt_tokens"] = trajectory.prompt_tokens;
    doc["completion_tokens"] = trajectory.completion_tokens;
    doc["aborted"] = trajectory.aborted_backend;
    return dump_canonical(doc);
}

} // namespace kblaze

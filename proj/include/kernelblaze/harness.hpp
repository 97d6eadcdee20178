#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kernelblaze/agents.hpp"
#include "kernelblaze/errors.hpp"
#include "kernelblaze/profile.hpp"
#include "kernelblaze/util.hpp"

namespace kblaze {

/// A concrete program variant moving through the pipeline. The declared
/// operations manifest is what the deterministic soft-verification lint
/// compares against the reference.
struct Variant {
    std::string variant_id;
    std::string code;
    std::vector<std::string> declared_ops;
};

struct VerificationSpec {
    std::vector<std::int64_t> seeds = {1, 2, 3};
    double relative_tolerance = 1e-2;
    double absolute_tolerance = 1e-3;
};

struct TaskSpec {
    std::string task_id;
    int level = 2;
    Variant reference_variant;
    Variant starting_variant;
    std::int64_t baseline_cycles = 0; // 0 means "query the backend"
    VerificationSpec verification;
    std::vector<std::string> declared_ops;
};

struct CompileResult {
    bool ok = true;
    std::string diagnostics;
};

/// Adapter boundary to whatever actually builds, runs and profiles a
/// variant. The simulated environment implements this deterministically;
/// GPU shell-out adapters document their own nondeterminism envelope.
class ExecutionBackend {
public:
    virtual ~ExecutionBackend() = default;
    virtual CompileResult compile(const Variant& variant) = 0;
    virtual std::vector<double> execute(const Variant& variant, std::int64_t seed) = 0;
    virtual ProfileReport profile(const Variant& variant) = 0;
    virtual std::int64_t baseline(const TaskSpec& task) = 0;
    virtual std::string name() const = 0;
    virtual int max_concurrent_sessions() const { return 0; } // 0 = unbounded
};

// ---------------------------------------------------------------------------
// Numerical verification

struct VerificationResult {
    bool pass = true;
    std::int64_t failing_seed = 0;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

/// Elementwise tolerance check across all seeds:
/// |candidate - reference| <= atol + rtol * |reference|.
inline VerificationResult verify_numerical(const std::vector<std::vector<double>>& candidate_outputs,
                                           const std::vector<std::vector<double>>& reference_outputs,
                                           const VerificationSpec& spec) {
    if (candidate_outputs.size() != reference_outputs.size() ||
        candidate_outputs.size() != spec.seeds.size())
        throw Error(ErrorCode::ShapeMismatch, "seed group counts differ");
    for (std::size_t s = 0; s < candidate_outputs.size(); ++s) {
        if (candidate_outputs[s].size() != reference_outputs[s].size())
            throw Error(ErrorCode::ShapeMismatch,
                        "seed " + std::to_string(spec.seeds[s]) + ": shapes differ (" +
                            std::to_string(candidate_outputs[s].size()) + " vs " +
                            std::to_string(reference_outputs[s].size()) + ")");
        double max_rel = 0.0, max_abs = 0.0;
        bool seed_ok = true;
        for (std::size_t i = 0; i < candidate_outputs[s].size(); ++i) {
            const double c = candidate_outputs[s][i];
            const double r = reference_outputs[s][i];
            const double abs_err = std::abs(c - r);
            max_abs = std::max(max_abs, abs_err);
            if (r != 0.0) max_rel = std::max(max_rel, abs_err / std::abs(r));
            if (abs_err > spec.absolute_tolerance + spec.relative_tolerance * std::abs(r))
                seed_ok = false;
        }
        if (!seed_ok) return {false, spec.seeds[s], max_rel, max_abs};
    }
    return {};
}

// ---------------------------------------------------------------------------
// Soft verification (anti-reward-hacking guard)

inline const std::vector<std::string>& default_library_denylist() {
    static const std::vector<std::string> denylist = {
        "cublas", "cudnn", "cutlass", "cufft", "cusparse", "thrust::",
    };
    return denylist;
}

/// Deterministic lint: reject when the candidate's declared operation list
/// is a strict subset of the reference's, or when the code calls a
/// denylisted external-library symbol.
inline SoftVerdict soft_verify_lint(const Variant& candidate,
                                    const std::vector<std::string>& reference_ops,
                                    const std::vector<std::string>& denylist =
                                        default_library_denylist()) {
    for (const auto& symbol : denylist)
        if (candidate.code.find(symbol) != std::string::npos)
            return {false, "external_library"};

    bool subset = true;
    for (const auto& op : candidate.declared_ops)
        if (std::find(reference_ops.begin(), reference_ops.end(), op) == reference_ops.end())
            subset = false;
    const bool strict = subset && candidate.declared_ops.size() < reference_ops.size();
    if (strict) return {false, "functionality_removed"};
    return {true, ""};
}

/// Agent-backed structural verdict with lint fallback when the agent is
/// absent or unavailable.
inline SoftVerdict soft_verify(Agent* agent, const Variant& candidate,
                               const std::string& reference_code,
                               const std::vector<std::string>& reference_ops,
                               TokenCounter* tokens = nullptr) {
    if (agent) {
        try {
            AgentRequest request;
            request.role = AgentRole::SoftVerifier;
            request.response_schema_id = "soft_verdict";
            std::string ops_text;
            for (const auto& op : reference_ops) {
                if (!ops_text.empty()) ops_text += ", ";
                ops_text += op;
            }
            request.rendered_prompt = render_prompt(AgentRole::SoftVerifier,
                                                    {{"candidate_code", candidate.code},
                                                     {"reference_code", reference_code},
                                                     {"reference_operations", ops_text}});
            AgentResponse response = agent->complete(request);
            if (tokens) tokens->add(AgentRole::SoftVerifier, response);
            return parse_soft_verdict(response.text);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::AgentUnavailable && e.code() != ErrorCode::ParseFailure &&
                e.code() != ErrorCode::ScriptExhausted)
                throw;
        }
    }
    return soft_verify_lint(candidate, reference_ops);
}

// ---------------------------------------------------------------------------
// Pipeline

enum class PipelineStatus { Profiled, CompileFailed, VerifyFailed, SoftVerifyFailed, BackendError };

inline std::string_view pipeline_status_name(PipelineStatus status) {
    switch (status) {
        case PipelineStatus::Profiled: return "Profiled";
        case PipelineStatus::CompileFailed: return "CompileFailed";
        case PipelineStatus::VerifyFailed: return "VerifyFailed";
        case PipelineStatus::SoftVerifyFailed: return "SoftVerifyFailed";
        case PipelineStatus::BackendError: return "BackendError";
    }
    return "Unknown";
}

struct PipelineAttempt {
    std::string stage;    // "compile" | "verify" | "soft_verify" | "profile"
    std::string feedback;
};

struct PipelineOutcome {
    PipelineStatus status = PipelineStatus::BackendError;
    std::optional<ProfileReport> report; // present iff status == Profiled
    std::vector<PipelineAttempt> attempts;
    std::string variant_id;
    Variant final_variant; // the (possibly repaired) variant that reached the last stage
};

struct RetryBudget {
    int compile_repairs = 3;
    int verify_repairs = 2;
};

/// Called with stage feedback to produce a repaired variant; absent or
/// returning an empty optional means no repair is attempted.
using RepairFn = std::function<std::optional<Variant>(const std::string& stage,
                                                      const std::string& feedback,
                                                      const Variant& failed)>;

/// Fixed stage ordering: compile -> numerical verify -> soft verify ->
/// profile. Profiling is never reached without both verification passes, so
/// a reward can never come from an unverified variant.
inline PipelineOutcome run_pipeline(Variant variant, const TaskSpec& task,
                                    ExecutionBackend& backend, const VerificationSpec& spec,
                                    const RetryBudget& budget = {},
                                    const RepairFn& repair = nullptr, Agent* soft_verifier = nullptr,
                                    TokenCounter* tokens = nullptr) {
    PipelineOutcome outcome;
    outcome.variant_id = variant.variant_id;

    auto try_repair = [&](const char* stage, const std::string& feedback,
                          int& repairs_left) -> bool {
        outcome.attempts.push_back({stage, feedback});
        if (!repair || repairs_left <= 0) return false;
        --repairs_left;
        std::optional<Variant> repaired = repair(stage, feedback, variant);
        if (!repaired) return false;
        variant = std::move(*repaired);
        return true;
    };

    try {
        int compile_left = budget.compile_repairs;
        while (true) {
            CompileResult compiled = backend.compile(variant);
            if (compiled.ok) break;
            if (!try_repair("compile", compiled.diagnostics, compile_left)) {
                outcome.status = PipelineStatus::CompileFailed;
                outcome.final_variant = variant;
                return outcome;
            }
        }

        int verify_left = budget.verify_repairs;
        while (true) {
            std::vector<std::vector<double>> candidate_outputs, reference_outputs;
            candidate_outputs.reserve(spec.seeds.size());
            reference_outputs.reserve(spec.seeds.size());
            for (std::int64_t seed : spec.seeds) {
                candidate_outputs.push_back(backend.execute(variant, seed));
                reference_outputs.push_back(backend.execute(task.reference_variant, seed));
            }
            VerificationResult verified;
            std::string feedback;
            try {
                verified = verify_numerical(candidate_outputs, reference_outputs, spec);
                if (!verified.pass)
                    feedback = "seed " + std::to_string(verified.failing_seed) +
                               ": max_rel_err=" + format_float6(verified.max_rel_err) +
                               " max_abs_err=" + format_float6(verified.max_abs_err);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::ShapeMismatch) throw;
                verified.pass = false;
                feedback = e.what();
            }
            if (verified.pass) break;
            bool recompiled = false;
            if (try_repair("verify", feedback, verify_left)) {
                // A repair may change the code arbitrarily, so it recompiles.
                CompileResult compiled = backend.compile(variant);
                recompiled = compiled.ok;
                if (!compiled.ok) {
                    outcome.attempts.push_back({"compile", compiled.diagnostics});
                    outcome.status = PipelineStatus::CompileFailed;
                    outcome.final_variant = variant;
                    return outcome;
                }
            }
            if (!recompiled) {
                outcome.status = PipelineStatus::VerifyFailed;
                outcome.final_variant = variant;
                return outcome;
            }
        }

        SoftVerdict verdict = soft_verify(soft_verifier, variant, task.reference_variant.code,
                                          task.reference_variant.declared_ops.empty()
                                              ? task.declared_ops
                                              : task.reference_variant.declared_ops,
                                          tokens);
        if (!verdict.accept) {
            outcome.attempts.push_back({"soft_verify", verdict.reason});
            outcome.status = PipelineStatus::SoftVerifyFailed;
            outcome.final_variant = variant;
            return outcome;
        }

        outcome.report = backend.profile(variant);
        outcome.status = PipelineStatus::Profiled;
        outcome.final_variant = variant;
        return outcome;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::BackendError) throw;
        outcome.attempts.push_back({"backend", e.what()});
        outcome.status = PipelineStatus::BackendError;
        outcome.final_variant = variant;
        return outcome;
    }
}

// ---------------------------------------------------------------------------
// Task spec files

/// Loads the external task description: code paths are resolved relative to
/// the spec file and inlined.
inline TaskSpec load_task_spec(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::MalformedFile, path + ": " + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::MalformedFile, path + ": not an object");

    const auto dir = std::filesystem::path(path).parent_path();
    auto read_rel = [&](const std::string& rel) { return read_file((dir / rel).string()); };

    TaskSpec task;
    task.task_id = detail::get_field<std::string>(doc, "task_id", path);
    task.level = detail::get_field<int>(doc, "level", path);
    if (task.level < 1 || task.level > 3)
        throw Error(ErrorCode::MalformedFile, path + ": level must be 1, 2 or 3");

    task.reference_variant.variant_id = task.task_id + "_reference";
    task.reference_variant.code =
        read_rel(detail::get_field<std::string>(doc, "reference_code", path));
    task.starting_variant.variant_id = task.task_id + "_v0";
    task.starting_variant.code =
        read_rel(detail::get_field<std::string>(doc, "starting_variant", path));

    if (doc.contains("baseline_cycles") && doc.at("baseline_cycles").is_number_integer())
        task.baseline_cycles = doc.at("baseline_cycles").get<std::int64_t>();
    else if (doc.contains("baseline_cycles") && doc.at("baseline_cycles") == "query")
        task.baseline_cycles = 0;
    else
        throw Error(ErrorCode::MalformedFile, path + ": baseline_cycles must be integer or \"query\"");

    if (doc.contains("verification")) {
        const auto& v = doc.at("verification");
        if (v.contains("seeds")) task.verification.seeds = v.at("seeds").get<std::vector<std::int64_t>>();
        if (v.contains("relative_tolerance"))
            task.verification.relative_tolerance = v.at("relative_tolerance").get<double>();
        if (v.contains("absolute_tolerance"))
            task.verification.absolute_tolerance = v.at("absolute_tolerance").get<double>();
        if (task.verification.seeds.empty())
            throw Error(ErrorCode::MalformedFile, path + ": verification.seeds must be non-empty");
        if (task.verification.relative_tolerance <= 0 || task.verification.absolute_tolerance <= 0)
            throw Error(ErrorCode::MalformedFile, path + ": tolerances must be > 0");
    }
    if (doc.contains("declared_ops"))
        task.declared_ops = doc.at("declared_ops").get<std::vector<std::string>>();
    task.reference_variant.declared_ops = task.declared_ops;
    task.starting_variant.declared_ops = task.declared_ops;
    return task;
}

} // namespace kblaze

#include <catch2/catch_amalgamated.hpp>

#include "kernelblaze/simenv.hpp"

using namespace kblaze;

namespace {

auto error_code_is(ErrorCode code) {
    return Catch::Matchers::Predicate<Error>([code](const Error& e) { return e.code() == code; });
}

/// Small hand-built task: s0 --halve(0.5)--> s1; one verify-broken op, one
/// compile-broken op, one explicit no-gain op.
SyntheticTask manual_task() {
    SyntheticTask task;
    task.task_id = "manual";
    task.base_cycles = 1000;
    task.baseline_cycles = 1000;
    task.start_state = "s0";
    task.declared_ops = {"halve", "broken_v", "broken_c", "neutral"};

    HiddenState s0;
    s0.name = "s0";
    s0.kernel_name = "k";
    s0.invocations = 2;
    s0.intended_signature.primary_bottleneck = "dram_bandwidth_bound";
    s0.metrics = {{"dram_throughput_pct", 90.0}, {"achieved_occupancy_pct", 70.0}};
    HiddenState s1 = s0;
    s1.name = "s1";
    s1.intended_signature.primary_bottleneck = "balanced";
    s1.metrics = {{"dram_throughput_pct", 20.0}, {"achieved_occupancy_pct", 70.0}};
    task.hidden_states = {s0, s1};

    task.effect_table[{"s0", "halve"}] = {0.5, "s1", FailureMode::None};
    task.effect_table[{"s0", "broken_v"}] = {1.0, "s0", FailureMode::Verify};
    task.effect_table[{"s0", "broken_c"}] = {1.0, "s0", FailureMode::Compile};
    task.effect_table[{"s0", "neutral"}] = {1.0, "s1", FailureMode::None};
    return task;
}

/// Independent brute-force enumerator: walks every op sequence up to depth
/// over the declared op list (missing entries included as no-ops), tracking
/// the minimum reachable cycles. Structured differently from the library's
/// DFS on purpose.
std::int64_t enumerate_min_cycles(const SyntheticTask& task, int depth) {
    std::int64_t best = scaled_cycles(task.base_cycles, 1.0);
    struct Node {
        std::string state;
        double product;
        int used;
    };
    std::vector<Node> frontier = {{task.start_state, 1.0, 0}};
    while (!frontier.empty()) {
        Node node = frontier.back();
        frontier.pop_back();
        best = std::min(best, scaled_cycles(task.base_cycles, node.product));
        if (node.used >= depth) continue;
        for (const auto& op : task.declared_ops) {
            auto it = task.effect_table.find({node.state, op});
            if (it == task.effect_table.end()) {
                frontier.push_back({node.state, node.product, node.used + 1});
            } else if (it->second.failure_mode == FailureMode::None) {
                frontier.push_back(
                    {it->second.next_state, node.product * it->second.cycle_factor, node.used + 1});
            }
        }
    }
    return best;
}

} // namespace

TEST_CASE("make_synthetic_task is deterministic in its seed") {
    SimTaskSpecParams params{4, 6, 2};
    const SyntheticTask a = make_synthetic_task(7, params);
    const SyntheticTask b = make_synthetic_task(7, params);
    CHECK(task_to_json_string(a) == task_to_json_string(b));
    const SyntheticTask c = make_synthetic_task(8, params);
    CHECK(task_to_json_string(a) != task_to_json_string(c));
}

TEST_CASE("generator rejects unusable specs") {
    CHECK_THROWS_MATCHES(make_synthetic_task(1, {1, 6, 2}), Error,
                         error_code_is(ErrorCode::InvalidSpec));
    CHECK_THROWS_MATCHES(make_synthetic_task(1, {4, 1, 2}), Error,
                         error_code_is(ErrorCode::InvalidSpec));
    CHECK_THROWS_MATCHES(make_synthetic_task(1, {4, 6, 4}), Error,
                         error_code_is(ErrorCode::InvalidSpec)); // depth needs n_states-1
    CHECK_THROWS(make_synthetic_task(1, {8, 2, 3}));             // not enough chain ops
}

TEST_CASE("generated tasks satisfy the planted guarantees") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SimTaskSpecParams params{4, 6, 2 + static_cast<int>(seed % 2)};
        const SyntheticTask task = make_synthetic_task(seed, params);
        INFO("seed " << seed);

        // At least one explicit no-gain decoy and one failure entry.
        bool has_decoy = false, has_failure = false;
        for (const auto& [key, effect] : task.effect_table) {
            has_decoy |= effect.failure_mode == FailureMode::None && effect.cycle_factor >= 1.0;
            has_failure |= effect.failure_mode != FailureMode::None;
        }
        CHECK(has_decoy);
        CHECK(has_failure);

        // The planted chain strictly beats every shorter sequence, and in
        // particular every single step.
        const int depth = params.depth_of_best_chain;
        const auto chain_best = optimal_speedup(task, depth);
        const auto shorter_best = optimal_speedup(task, depth - 1);
        CHECK(chain_best.best_cycles < shorter_best.best_cycles);
        for (const auto& [key, effect] : task.effect_table) {
            if (key.first != task.start_state || effect.failure_mode != FailureMode::None)
                continue;
            const double chain_product =
                static_cast<double>(chain_best.best_cycles) / task.base_cycles;
            CHECK(chain_product < effect.cycle_factor);
        }

        // Hidden profiles classify back to their intended signatures.
        for (const auto& state : task.hidden_states) {
            const auto sig = classify_bottleneck(emit_report(task, state, task.base_cycles));
            CHECK(sig.primary_bottleneck == state.intended_signature.primary_bottleneck);
            CHECK(sig.secondary_bottleneck == state.intended_signature.secondary_bottleneck);
        }
    }
}

TEST_CASE("apply_optimization follows the effect table") {
    const SyntheticTask task = manual_task();
    const SyntheticVariant start = starting_variant(task);
    SECTION("factor 0.5 halves the cycles") {
        const auto [variant, outcome] = apply_optimization(task, start, "halve");
        CHECK(variant.cumulative_cycles == 500);
        CHECK(variant.current_hidden_state == "s1");
        CHECK(outcome.status == PipelineStatus::Profiled);
        REQUIRE(outcome.report.has_value());
        CHECK(total_elapsed_cycles(*outcome.report) == 500);
        CHECK(start.cumulative_cycles == 1000); // input untouched
        CHECK(start.applied_ops.empty());
    }
    SECTION("missing entry is a profiled no-op") {
        const auto [variant, outcome] = apply_optimization(task, start, "unknown_op");
        CHECK(variant.cumulative_cycles == 1000);
        CHECK(variant.current_hidden_state == "s0");
        CHECK(outcome.status == PipelineStatus::Profiled);
        CHECK(variant.applied_ops == std::vector<std::string>{"unknown_op"});
    }
    SECTION("failure modes map to pipeline failures and leave the variant") {
        const auto [v1, verify] = apply_optimization(task, start, "broken_v");
        CHECK(verify.status == PipelineStatus::VerifyFailed);
        CHECK(v1.applied_ops.empty());
        const auto [v2, compile] = apply_optimization(task, start, "broken_c");
        CHECK(compile.status == PipelineStatus::CompileFailed);
        CHECK(v2.applied_ops.empty());
    }
    SECTION("variants from another task are rejected") {
        SyntheticVariant foreign = start;
        foreign.task_id = "other";
        CHECK_THROWS_MATCHES(apply_optimization(task, foreign, "halve"), Error,
                             error_code_is(ErrorCode::UnknownVariant));
    }
    SECTION("cycle arithmetic stays within one rounding of the product") {
        SyntheticVariant v = start;
        double product = 1.0;
        for (int i = 0; i < 3; ++i) {
            auto [next, outcome] = apply_optimization(task, v, i == 0 ? "halve" : "unknown");
            v = next;
            if (i == 0) product *= 0.5;
            CHECK(std::llabs(v.cumulative_cycles -
                             std::llround(task.base_cycles * product)) <= 1);
        }
    }
}

TEST_CASE("optimal_speedup is an exhaustive oracle") {
    const SyntheticTask task = manual_task();
    SECTION("single halving optimization at depth 1") {
        const auto best = optimal_speedup(task, 1);
        CHECK(best.best_speedup == 2.0);
        CHECK(best.best_factor_chain == std::vector<std::string>{"halve"});
    }
    SECTION("depth 0 is the starting ratio") {
        CHECK(optimal_speedup(task, 0).best_speedup == 1.0);
        SyntheticTask shifted = manual_task();
        shifted.baseline_cycles = 1500;
        CHECK(optimal_speedup(shifted, 0).best_speedup == 1.5);
    }
    SECTION("depth cap") {
        CHECK_THROWS_MATCHES(optimal_speedup(task, 9), Error,
                             error_code_is(ErrorCode::DepthTooLarge));
    }
    SECTION("agrees with an independently coded enumerator on generated tasks") {
        for (std::uint64_t seed = 100; seed < 112; ++seed) {
            const SyntheticTask generated = make_synthetic_task(seed, {4, 6, 2});
            for (int depth = 0; depth <= 4; ++depth) {
                INFO("seed " << seed << " depth " << depth);
                CHECK(optimal_speedup(generated, depth).best_cycles ==
                      enumerate_min_cycles(generated, depth));
            }
        }
    }
    SECTION("monotone in depth") {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            const SyntheticTask generated = make_synthetic_task(seed, {4, 6, 3});
            double previous = 0.0;
            for (int depth = 0; depth <= 6; ++depth) {
                const double speedup = optimal_speedup(generated, depth).best_speedup;
                CHECK(speedup >= previous);
                previous = speedup;
            }
        }
    }
}

TEST_CASE("task dumps round trip") {
    const SyntheticTask task = make_synthetic_task(3, {4, 6, 2});
    const std::string dumped = task_to_json_string(task);
    const SyntheticTask reloaded = task_from_json(nlohmann::json::parse(dumped));
    CHECK(task_to_json_string(reloaded) == dumped);
    CHECK(reloaded.effect_table.size() == task.effect_table.size());
    CHECK(reloaded.hidden_states.size() == task.hidden_states.size());
    CHECK_THROWS_MATCHES(task_from_json(nlohmann::json{{"format", "other"}}), Error,
                         error_code_is(ErrorCode::MalformedFile));
}

TEST_CASE("sim backend implements the execution contract") {
    const SyntheticTask manual = manual_task();
    SimBackend backend({manual});
    const TaskSpec spec = backend.task_spec("manual");

    SECTION("task spec mirrors the synthetic task") {
        CHECK(spec.task_id == "manual");
        CHECK(spec.baseline_cycles == 1000);
        CHECK(spec.declared_ops == manual.declared_ops);
        CHECK(backend.baseline(spec) == 1000);
    }
    SECTION("baseline and starting profile match the task definition") {
        const auto report = backend.profile(spec.starting_variant);
        CHECK(total_elapsed_cycles(report) == manual.base_cycles);
        const auto again = backend.profile(spec.starting_variant);
        CHECK(profile_to_csv(report) == profile_to_csv(again));
    }
    SECTION("mechanical lowering appends ops and scales cycles") {
        OptimizationEntry halve;
        halve.opt_id = "halve";
        halve.name = "halve";
        const Variant lowered = backend.lower(spec, spec.starting_variant, "halve");
        CHECK(backend.compile(lowered).ok);
        const auto report = backend.profile(lowered);
        CHECK(total_elapsed_cycles(report) == 500);
    }
    SECTION("verify-broken variants fail the pipeline at the scripted seed") {
        const Variant lowered = backend.lower(spec, spec.starting_variant, "broken_v");
        const auto outcome = run_pipeline(lowered, spec, backend, spec.verification, {0, 0});
        CHECK(outcome.status == PipelineStatus::VerifyFailed);
        REQUIRE_FALSE(outcome.attempts.empty());
        // verify_failure_seed_ordinal = 1 selects the second seed.
        CHECK(outcome.attempts[0].feedback.find("seed 2") != std::string::npos);
    }
    SECTION("compile-broken variants fail with diagnostics") {
        const Variant lowered = backend.lower(spec, spec.starting_variant, "broken_c");
        const auto outcome = run_pipeline(lowered, spec, backend, spec.verification, {0, 0});
        CHECK(outcome.status == PipelineStatus::CompileFailed);
        CHECK(outcome.attempts[0].feedback.find("broken_c") != std::string::npos);
    }
    SECTION("unparseable code is a compile failure, enabling agent repair") {
        Variant garbage{"v", "__global__ void hallucinated() {}", spec.declared_ops};
        const auto compiled = backend.compile(garbage);
        CHECK_FALSE(compiled.ok);
        CHECK_FALSE(compiled.diagnostics.empty());
    }
    SECTION("unknown tasks are backend errors") {
        CHECK_THROWS_MATCHES(backend.task("nope"), Error, error_code_is(ErrorCode::BackendError));
    }
}

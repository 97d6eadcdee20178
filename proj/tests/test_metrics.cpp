#include <catch2/catch_amalgamated.hpp>

#include "kernelblaze/metrics.hpp"
#include "support/oracles.hpp"

using namespace kblaze;
using namespace kblaze::testing;

namespace {

TaskResult result(bool valid, double speedup, bool backend_error = false) {
    TaskResult r;
    r.task_id = "t";
    r.valid = valid;
    r.speedup = speedup;
    r.backend_error = backend_error;
    return r;
}

auto error_code_is(ErrorCode code) {
    return Catch::Matchers::Predicate<Error>([code](const Error& e) { return e.code() == code; });
}

} // namespace

TEST_CASE("fast_p counts valid results above a strict threshold") {
    const std::vector<TaskResult> results = {result(true, 2.0), result(true, 0.5),
                                             result(false, 3.0)};
    CHECK(fast_p(results, 1.0) == Catch::Approx(1.0 / 3.0));

    SECTION("exact ties never count") {
        const std::vector<TaskResult> ties = {result(true, 1.0), result(true, 1.0)};
        CHECK(fast_p(ties, 1.0) == 0.0);
    }
    SECTION("invalid rows stay in the denominator, backend errors leave it") {
        const std::vector<TaskResult> mixed = {result(true, 2.0), result(false, 9.0),
                                               result(true, 5.0, true)};
        CHECK(fast_p(mixed, 1.0) == 0.5);
    }
    SECTION("empty or all-backend-error input is an error") {
        CHECK_THROWS_MATCHES(fast_p({}, 1.0), Error, error_code_is(ErrorCode::EmptyResults));
        CHECK_THROWS(fast_p({result(true, 2.0, true)}, 1.0));
    }
    SECTION("matches the counting oracle on 200 random result sets") {
        Rng rng(808);
        for (int trial = 0; trial < 200; ++trial) {
            const auto results_r = random_results(rng);
            const double p = static_cast<double>(rng.below(300)) / 100.0;
            CHECK(fast_p(results_r, p) == oracle_fast_p(results_r, p));
        }
    }
}

TEST_CASE("fast_p_curve is pointwise fast_p over ascending thresholds") {
    const std::vector<TaskResult> one = {result(true, 2.0)};
    const auto curve = fast_p_curve(one, {1.0, 2.0, 3.0});
    REQUIRE(curve.size() == 3);
    CHECK(curve[0].second == 1.0); // strict: 2.0 > 1.0
    CHECK(curve[1].second == 0.0); // strict: 2.0 > 2.0 is false
    CHECK(curve[2].second == 0.0);

    SECTION("threshold validation") {
        CHECK_THROWS_MATCHES(fast_p_curve(one, {}), Error,
                             error_code_is(ErrorCode::UnsortedThresholds));
        CHECK_THROWS(fast_p_curve(one, {1.0, 1.0}));
        CHECK_THROWS(fast_p_curve(one, {2.0, 1.0}));
    }
    SECTION("agrees with fast_p pointwise and is non-increasing") {
        Rng rng(909);
        for (int trial = 0; trial < 50; ++trial) {
            const auto results_r = random_results(rng);
            const std::vector<double> thresholds = {0.5, 1.0, 1.5, 2.0, 4.0, 8.0};
            const auto curve_r = fast_p_curve(results_r, thresholds);
            double previous = 1.0;
            for (const auto& [p, fraction] : curve_r) {
                CHECK(fraction == fast_p(results_r, p));
                CHECK(fraction <= previous);
                previous = fraction;
            }
        }
    }
}

TEST_CASE("summarize computes the summary-table statistics") {
    SECTION("two-point fixture") {
        const std::vector<TaskResult> results = {result(true, 2.0), result(true, 8.0)};
        const SummaryRow row = summarize(results);
        CHECK(row.valid_rate == 1.0);
        CHECK(row.mean == 5.0);
        CHECK(row.geomean == Catch::Approx(4.0).epsilon(1e-12));
        CHECK(row.median == 5.0);
        CHECK(row.min == 2.0);
        CHECK(row.max == 8.0);
        CHECK(row.pct_gt_1 == 1.0);
        CHECK(row.pct_lt_1 == 0.0);
    }
    SECTION("statistics cover valid rows only; valid rate covers all scored rows") {
        const std::vector<TaskResult> results = {result(true, 2.0), result(false, 100.0),
                                                 result(true, 0.5, true)};
        const SummaryRow row = summarize(results);
        CHECK(row.valid_rate == 0.5);
        CHECK(row.mean == 2.0);
        CHECK(row.max == 2.0);
    }
    SECTION("no valid rows leaves zeroed statistics") {
        const SummaryRow row = summarize({result(false, 3.0)});
        CHECK(row.valid_rate == 0.0);
        CHECK(row.mean == 0.0);
        CHECK(row.geomean == 0.0);
    }
    SECTION("matches the independent oracle on 100 random result sets") {
        Rng rng(515);
        for (int trial = 0; trial < 100; ++trial) {
            const auto results_r = random_results(rng);
            const SummaryRow row = summarize(results_r);
            const StatsOracle oracle = oracle_summarize(results_r);
            const auto close = [](double a, double b) {
                return a == b || std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b));
            };
            CHECK(close(row.valid_rate, oracle.valid_rate));
            CHECK(close(row.mean, oracle.mean));
            CHECK(close(row.geomean, oracle.geomean));
            CHECK(close(row.median, oracle.median));
            CHECK(close(row.min, oracle.min));
            CHECK(close(row.max, oracle.max));
            CHECK(close(row.pct_gt_1, oracle.pct_gt_1));
            CHECK(close(row.pct_lt_1, oracle.pct_lt_1));
        }
    }
    SECTION("geomean never exceeds the mean") {
        Rng rng(616);
        for (int trial = 0; trial < 100; ++trial) {
            const auto results_r = random_results(rng);
            const SummaryRow row = summarize(results_r);
            CHECK(row.geomean <= row.mean + 1e-12);
        }
    }
}

TEST_CASE("summary row renders in the fixed table layout") {
    SummaryRow row;
    row.valid_rate = 0.95;
    row.mean = 9.419;
    row.geomean = 2.214;
    row.median = 2.074;
    row.min = 0.0488;
    row.max = 362.29;
    row.pct_gt_1 = 0.7260;
    row.pct_lt_1 = 0.2740;
    CHECK(render_summary_row(row) == "95%,9.419,2.214,2.074,0.0488,362.29,72.60%,27.40%");

    SECTION("csv wraps rows with labels") {
        const std::string csv = summary_csv({{"Ours", row}});
        CHECK(csv.find("label,valid_rate") == 0);
        CHECK(csv.find("Ours,95%,9.419") != std::string::npos);
    }
}

TEST_CASE("token accounting sums exactly") {
    CHECK(token_accounting({}).total_in == 0);
    CHECK(token_accounting({}).total_out == 0);

    const std::vector<TokenEvent> events = {{"lowering", 10, 5}, {"optimization_proposer", 7, 3}};
    const TokenTotals totals = token_accounting(events);
    CHECK(totals.total_in == 17);
    CHECK(totals.total_out == 8);
    CHECK(totals.per_role.at("lowering").first == 10);
    CHECK(totals.per_role.at("optimization_proposer").second == 3);

    SECTION("equals the script sums for a mock run") {
        // Mirror of a mock script: three proposer calls at (100, 60) each.
        std::vector<TokenEvent> script;
        for (int i = 0; i < 3; ++i) script.push_back({"optimization_proposer", 100, 60});
        const TokenTotals script_totals = token_accounting(script);
        CHECK(script_totals.total_in == 300);
        CHECK(script_totals.total_out == 180);
    }
}

TEST_CASE("usage_report counts attempts, successes and transitions") {
    auto step = [](const std::string& opt, double reward, bool accepted,
                   const std::string& state = "s") {
        RolloutStep s;
        s.opt_id = opt;
        s.state_id = state;
        s.reward = reward;
        s.outcome = accepted ? StepOutcome::Accepted : StepOutcome::Rejected;
        return s;
    };

    SECTION("a simple accepted pair forms one transition") {
        Trajectory t;
        t.steps = {step("A", 1.5, true), step("B", 2.0, true)};
        const UsageReport report = usage_report({t});
        CHECK(report.per_optimization.at("A").attempts == 1);
        CHECK(report.per_optimization.at("A").successes == 1);
        REQUIRE(report.transitions.count({"A", "B"}) == 1);
        CHECK(report.transitions.at({"A", "B"}).count == 1);
        CHECK(report.transitions.at({"A", "B"}).median_gain == 2.0);
    }
    SECTION("a rejected middle step breaks the adjacency") {
        Trajectory t;
        t.steps = {step("A", 1.5, true), step("X", 0.0, false), step("B", 2.0, true)};
        const UsageReport report = usage_report({t});
        CHECK(report.transitions.count({"A", "B"}) == 0);
        CHECK(report.transitions.count({"A", "X"}) == 0);
        CHECK(report.per_optimization.at("X").attempts == 1);
        CHECK(report.per_optimization.at("X").successes == 0);
    }
    SECTION("success needs a reward above the negligible-speedup cutoff") {
        Trajectory t;
        t.steps = {step("A", 1.005, true)};
        const UsageReport report = usage_report({t});
        CHECK(report.per_optimization.at("A").attempts == 1);
        CHECK(report.per_optimization.at("A").successes == 0);
    }
    SECTION("matches the brute-force pair enumerator on synthetic batches") {
        Rng rng(717);
        std::vector<Trajectory> batch;
        const std::vector<std::string> ops = {"a", "b", "c", "d"};
        for (int i = 0; i < 40; ++i) {
            Trajectory t;
            const int n = static_cast<int>(rng.below(8));
            for (int j = 0; j < n; ++j) {
                const bool accepted = rng.below(3) != 0;
                t.steps.push_back(step(ops[rng.below(ops.size())],
                                       accepted ? 0.8 + rng.below(20) / 10.0 : 0.0, accepted,
                                       "state_" + std::to_string(rng.below(3))));
            }
            batch.push_back(std::move(t));
        }
        const UsageReport report = usage_report(batch);
        const UsageOracle oracle = oracle_usage(batch);

        std::size_t total_steps = 0;
        for (const auto& t : batch) total_steps += t.steps.size();
        std::int64_t total_attempts = 0;
        for (const auto& [opt, usage] : report.per_optimization) total_attempts += usage.attempts;
        CHECK(static_cast<std::size_t>(total_attempts) == total_steps);

        REQUIRE(report.per_optimization.size() == oracle.per_opt.size());
        for (const auto& [opt, usage] : report.per_optimization) {
            CHECK(usage.attempts == oracle.per_opt.at(opt).first);
            CHECK(usage.successes == oracle.per_opt.at(opt).second);
        }
        CHECK(report.per_state.size() == oracle.per_state.size());
        REQUIRE(report.transitions.size() == oracle.transition_gains.size());
        for (const auto& [key, stats] : report.transitions) {
            auto gains = oracle.transition_gains.at(key);
            std::sort(gains.begin(), gains.end());
            const double median = gains.size() % 2 == 1
                                      ? gains[gains.size() / 2]
                                      : (gains[gains.size() / 2 - 1] + gains[gains.size() / 2]) / 2;
            CHECK(stats.count == static_cast<std::int64_t>(gains.size()));
            CHECK(stats.median_gain == median);
        }
    }
}

TEST_CASE("report emission is byte-deterministic") {
    const std::vector<TaskResult> results = {result(true, 2.0), result(true, 1.2),
                                             result(false, 0.0)};
    const auto curve = fast_p_curve(results, {1.0, 1.5, 2.0});
    CHECK(fastp_csv(curve) == fastp_csv(curve));
    CHECK(fastp_csv(curve) == "p,fraction\n1,0.666667\n1.5,0.333333\n2,0\n");
    const std::string svg = fastp_svg(curve, "demo");
    CHECK(svg == fastp_svg(curve, "demo"));
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("polyline") != std::string::npos);

    Trajectory t;
    RolloutStep s;
    s.opt_id = "a";
    s.state_id = "st";
    s.outcome = StepOutcome::Accepted;
    s.reward = 1.5;
    t.steps = {s, s};
    const UsageReport usage = usage_report({t});
    CHECK(usage_csv(usage) == "opt_id,attempts,successes\na,2,2\n");
    CHECK(transitions_csv(usage) == "from_opt,to_opt,count,median_gain\na,a,1,1.5\n");
    CHECK(state_usage_csv(usage) == "state_id,attempts\nst,2\n");
}

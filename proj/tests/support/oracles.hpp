#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "kernelblaze/icrl.hpp"
#include "kernelblaze/metrics.hpp"
#include "kernelblaze/rng.hpp"

namespace kblaze::testing {

/// Independent brute-force statistics over task results, implemented with
/// different algorithms than the library (full sorts, long-double products)
/// so agreement is meaningful.
struct StatsOracle {
    double valid_rate = 0.0;
    double mean = 0.0;
    double geomean = 0.0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    double pct_gt_1 = 0.0;
    double pct_lt_1 = 0.0;
};

inline double oracle_fast_p(const std::vector<TaskResult>& results, double p) {
    int total = 0, hits = 0;
    for (const auto& r : results) {
        if (r.backend_error) continue;
        ++total;
        if (r.valid && r.speedup > p) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

inline StatsOracle oracle_summarize(const std::vector<TaskResult>& results) {
    StatsOracle oracle;
    std::vector<double> speedups;
    int scored = 0;
    for (const auto& r : results) {
        if (r.backend_error) continue;
        ++scored;
        if (r.valid) speedups.push_back(r.speedup);
    }
    oracle.valid_rate = static_cast<double>(speedups.size()) / scored;
    if (speedups.empty()) return oracle;

    double sum = 0.0;
    for (double s : speedups) sum += s;
    oracle.mean = sum / static_cast<double>(speedups.size());

    long double product = 1.0L;
    int positive = 0;
    for (double s : speedups)
        if (s > 0.0) {
            product *= static_cast<long double>(s);
            ++positive;
        }
    oracle.geomean =
        positive > 0 ? static_cast<double>(std::pow(product, 1.0L / positive)) : 0.0;

    std::vector<double> sorted = speedups;
    std::sort(sorted.begin(), sorted.end());
    oracle.min = sorted.front();
    oracle.max = sorted.back();
    oracle.median = sorted.size() % 2 == 1
                        ? sorted[sorted.size() / 2]
                        : (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]) / 2.0;

    int above = 0, below = 0;
    for (double s : speedups) {
        if (s > 1.0) ++above;
        if (s < 1.0) ++below;
    }
    oracle.pct_gt_1 = static_cast<double>(above) / speedups.size();
    oracle.pct_lt_1 = static_cast<double>(below) / speedups.size();
    return oracle;
}

struct UsageOracle {
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> per_opt; // attempts, successes
    std::map<std::string, std::int64_t> per_state;
    std::map<std::pair<std::string, std::string>, std::vector<double>> transition_gains;
};

/// Pair enumeration done the dumb way: scan every adjacent index pair.
inline UsageOracle oracle_usage(const std::vector<Trajectory>& trajectories) {
    UsageOracle oracle;
    for (const auto& trajectory : trajectories) {
        for (const auto& step : trajectory.steps) {
            auto& slot = oracle.per_opt[step.opt_id];
            slot.first += 1;
            if (step.outcome == StepOutcome::Accepted && step.reward > 1.01) slot.second += 1;
            oracle.per_state[step.state_id] += 1;
        }
        if (trajectory.steps.size() < 2) continue;
        for (std::size_t i = 0; i + 1 < trajectory.steps.size(); ++i)
            if (trajectory.steps[i].outcome == StepOutcome::Accepted &&
                trajectory.steps[i + 1].outcome == StepOutcome::Accepted)
                oracle.transition_gains[{trajectory.steps[i].opt_id,
                                         trajectory.steps[i + 1].opt_id}]
                    .push_back(trajectory.steps[i + 1].reward);
    }
    return oracle;
}

inline std::vector<TaskResult> random_results(Rng& rng, int min_rows = 1, int max_rows = 60) {
    const int n = min_rows + static_cast<int>(rng.below(max_rows - min_rows + 1));
    std::vector<TaskResult> results;
    for (int i = 0; i < n; ++i) {
        TaskResult r;
        r.task_id = "task_" + std::to_string(i);
        r.backend_error = rng.below(12) == 0;
        r.valid = !r.backend_error && rng.below(5) != 0;
        // Grid-valued speedups across three orders of magnitude, with
        // occasional exact 1.0 ties to exercise the strict inequalities.
        if (rng.below(6) == 0)
            r.speedup = 1.0;
        else
            r.speedup = static_cast<double>(1 + rng.below(40000)) / 100.0;
        r.tokens_in = static_cast<std::int64_t>(rng.below(100000));
        r.tokens_out = static_cast<std::int64_t>(rng.below(50000));
        results.push_back(std::move(r));
    }
    // Guarantee at least one scoreable row.
    if (std::all_of(results.begin(), results.end(),
                    [](const TaskResult& r) { return r.backend_error; }))
        results.front().backend_error = false;
    return results;
}

} // namespace kblaze::testing

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kernelblaze/errors.hpp"
#include "kernelblaze/icrl.hpp"
#include "kernelblaze/util.hpp"

namespace kblaze {

struct TaskResult {
    std::string task_id;
    bool valid = false;
    double speedup = 0.0; // vs the task baseline; meaningful only when valid
    std::int64_t tokens_in = 0;
    std::int64_t tokens_out = 0;
    bool backend_error = false;
};

namespace detail {

inline std::vector<const TaskResult*> scored_rows(const std::vector<TaskResult>& results) {
    std::vector<const TaskResult*> rows;
    for (const auto& r : results)
        if (!r.backend_error) rows.push_back(&r);
    return rows;
}

} // namespace detail

/// Fraction of tasks that are both valid and strictly faster than p.
/// Backend-error rows are infrastructure faults and leave the denominator.
inline double fast_p(const std::vector<TaskResult>& results, double p) {
    const auto rows = detail::scored_rows(results);
    if (rows.empty()) throw Error(ErrorCode::EmptyResults, "no scoreable results");
    std::int64_t hits = 0;
    for (const auto* r : rows)
        if (r->valid && r->speedup > p) ++hits;
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

inline std::vector<std::pair<double, double>> fast_p_curve(const std::vector<TaskResult>& results,
                                                           const std::vector<double>& thresholds) {
    if (thresholds.empty())
        throw Error(ErrorCode::UnsortedThresholds, "threshold list must be non-empty");
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (!(thresholds[i] > thresholds[i - 1]))
            throw Error(ErrorCode::UnsortedThresholds, "thresholds must be strictly ascending");
    std::vector<std::pair<double, double>> curve;
    curve.reserve(thresholds.size());
    for (double p : thresholds) curve.emplace_back(p, fast_p(results, p));
    return curve;
}

struct SummaryRow {
    double valid_rate = 0.0; // over non-backend-error rows
    double mean = 0.0;       // speedup statistics over valid rows only
    double geomean = 0.0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    double pct_gt_1 = 0.0;   // strict inequalities; exactly 1.0 counts in neither
    double pct_lt_1 = 0.0;
};

inline SummaryRow summarize(const std::vector<TaskResult>& results) {
    const auto rows = detail::scored_rows(results);
    if (rows.empty()) throw Error(ErrorCode::EmptyResults, "no scoreable results");

    std::vector<double> speedups;
    for (const auto* r : rows)
        if (r->valid) speedups.push_back(r->speedup);

    SummaryRow row;
    row.valid_rate = static_cast<double>(speedups.size()) / static_cast<double>(rows.size());
    if (speedups.empty()) return row;

    std::sort(speedups.begin(), speedups.end());
    double sum = 0.0, log_sum = 0.0;
    std::int64_t positive = 0, above = 0, below = 0;
    for (double s : speedups) {
        sum += s;
        if (s > 0.0) {
            log_sum += std::log(s);
            ++positive;
        }
        if (s > 1.0) ++above;
        if (s < 1.0) ++below;
    }
    const auto n = speedups.size();
    row.mean = sum / static_cast<double>(n);
    row.geomean = positive > 0 ? std::exp(log_sum / static_cast<double>(positive)) : 0.0;
    row.median = n % 2 == 1 ? speedups[n / 2] : 0.5 * (speedups[n / 2 - 1] + speedups[n / 2]);
    row.min = speedups.front();
    row.max = speedups.back();
    row.pct_gt_1 = static_cast<double>(above) / static_cast<double>(n);
    row.pct_lt_1 = static_cast<double>(below) / static_cast<double>(n);
    return row;
}

namespace detail {

inline std::string format_speedup_stat(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.5g", value);
    return buf;
}

inline std::string format_pct(double fraction) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f%%", fraction * 100.0);
    return buf;
}

} // namespace detail

/// Summary-table row layout: ValidRate, Average, GeoMean, Med., Min, Max,
/// %>1x, %<1x. Speedup statistics are computed over valid rows only.
inline std::string render_summary_row(const SummaryRow& row) {
    std::string out = std::to_string(std::llround(row.valid_rate * 100.0)) + "%";
    out += "," + detail::format_speedup_stat(row.mean);
    out += "," + detail::format_speedup_stat(row.geomean);
    out += "," + detail::format_speedup_stat(row.median);
    out += "," + detail::format_speedup_stat(row.min);
    out += "," + detail::format_speedup_stat(row.max);
    out += "," + detail::format_pct(row.pct_gt_1);
    out += "," + detail::format_pct(row.pct_lt_1);
    return out;
}

inline constexpr const char* kSummaryCsvHeader =
    "label,valid_rate,average,geomean,median,min,max,pct_gt_1x,pct_lt_1x";

inline std::string summary_csv(const std::vector<std::pair<std::string, SummaryRow>>& rows) {
    std::string out = std::string(kSummaryCsvHeader) + "\n";
    for (const auto& [label, row] : rows) out += label + "," + render_summary_row(row) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Token accounting

struct TokenEvent {
    std::string role_id;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct TokenTotals {
    std::int64_t total_in = 0;
    std::int64_t total_out = 0;
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> per_role;
};

inline TokenTotals token_accounting(const std::vector<TokenEvent>& events) {
    TokenTotals totals;
    for (const auto& event : events) {
        totals.total_in += event.prompt_tokens;
        totals.total_out += event.completion_tokens;
        auto& slot = totals.per_role[event.role_id];
        slot.first += event.prompt_tokens;
        slot.second += event.completion_tokens;
    }
    return totals;
}

// ---------------------------------------------------------------------------
// Usage and transition reports

struct OptUsage {
    std::int64_t attempts = 0;
    std::int64_t successes = 0; // accepted with reward above the success threshold
};

struct TransitionStats {
    std::int64_t count = 0;
    double median_gain = 0.0; // median reward of the pair's second step
};

struct UsageReport {
    std::map<std::string, OptUsage> per_optimization;
    std::map<std::string, std::int64_t> per_state;
    std::map<std::pair<std::string, std::string>, TransitionStats> transitions;
};

namespace detail {

inline double median_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace detail

/// Per-optimization attempt/success counts, per-state usage, and statistics
/// over consecutive accepted optimization pairs within a trajectory. A
/// rejected step between two accepted ones breaks the adjacency.
inline UsageReport usage_report(const std::vector<Trajectory>& trajectories) {
    UsageReport report;
    std::map<std::pair<std::string, std::string>, std::vector<double>> transition_gains;
    for (const auto& trajectory : trajectories) {
        for (const auto& step : trajectory.steps) {
            auto& usage = report.per_optimization[step.opt_id];
            usage.attempts += 1;
            if (step.outcome == StepOutcome::Accepted && step.reward > kSuccessGainThreshold)
                usage.successes += 1;
            report.per_state[step.state_id] += 1;
        }
        for (std::size_t i = 0; i + 1 < trajectory.steps.size(); ++i) {
            const auto& a = trajectory.steps[i];
            const auto& b = trajectory.steps[i + 1];
            if (a.outcome == StepOutcome::Accepted && b.outcome == StepOutcome::Accepted)
                transition_gains[{a.opt_id, b.opt_id}].push_back(b.reward);
        }
    }
    for (const auto& [key, gains] : transition_gains)
        report.transitions[key] = {static_cast<std::int64_t>(gains.size()),
                                   detail::median_of(gains)};
    return report;
}

inline std::string usage_csv(const UsageReport& report) {
    std::string out = "opt_id,attempts,successes\n";
    for (const auto& [opt, usage] : report.per_optimization)
        out += opt + "," + std::to_string(usage.attempts) + "," + std::to_string(usage.successes) +
               "\n";
    return out;
}

inline std::string state_usage_csv(const UsageReport& report) {
    std::string out = "state_id,attempts\n";
    for (const auto& [state, count] : report.per_state)
        out += state + "," + std::to_string(count) + "\n";
    return out;
}

inline std::string transitions_csv(const UsageReport& report) {
    std::string out = "from_opt,to_opt,count,median_gain\n";
    for (const auto& [key, stats] : report.transitions)
        out += key.first + "," + key.second + "," + std::to_string(stats.count) + "," +
               format_float6(stats.median_gain) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Curve emission

inline std::string fastp_csv(const std::vector<std::pair<double, double>>& curve) {
    std::string out = "p,fraction\n";
    for (const auto& [p, fraction] : curve)
        out += format_float6(p) + "," + format_float6(fraction) + "\n";
    return out;
}

/// Standalone SVG line chart of a fast_p curve. Fixed canvas and fixed
/// numeric formatting keep the output byte-deterministic.
inline std::string fastp_svg(const std::vector<std::pair<double, double>>& curve,
                             const std::string& title) {
    const double width = 640.0, height = 400.0;
    const double left = 60.0, right = 20.0, top = 40.0, bottom = 50.0;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    double p_min = curve.front().first, p_max = curve.back().first;
    if (p_max <= p_min) p_max = p_min + 1.0;

    auto fmt = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };
    auto x_of = [&](double p) { return left + (p - p_min) / (p_max - p_min) * plot_w; };
    auto y_of = [&](double fraction) { return top + (1.0 - fraction) * plot_h; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
           "viewBox=\"0 0 640 400\">\n";
    svg += "  <rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
    svg += "  <text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">" +
           title + "</text>\n";
    svg += "  <line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(left) +
           "\" y2=\"" + fmt(top + plot_h) + "\" stroke=\"black\"/>\n";
    svg += "  <line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top + plot_h) + "\" x2=\"" +
           fmt(left + plot_w) + "\" y2=\"" + fmt(top + plot_h) + "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double fraction = tick / 4.0;
        svg += "  <text x=\"" + fmt(left - 8) + "\" y=\"" + fmt(y_of(fraction) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               fmt(fraction) + "</text>\n";
    }
    std::string points;
    for (const auto& [p, fraction] : curve) {
        if (!points.empty()) points += " ";
        points += fmt(x_of(p)) + "," + fmt(y_of(fraction));
        svg += "  <text x=\"" + fmt(x_of(p)) + "\" y=\"" + fmt(top + plot_h + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               format_float6(p) + "</text>\n";
    }
    svg += "  <polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"" + points +
           "\"/>\n";
    for (const auto& [p, fraction] : curve)
        svg += "  <circle cx=\"" + fmt(x_of(p)) + "\" cy=\"" + fmt(y_of(fraction)) +
               "\" r=\"3\" fill=\"#1f6fb2\"/>\n";
    svg += "  <text x=\"" + fmt(left + plot_w / 2) + "\" y=\"" + fmt(height - 12) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">speedup "
           "threshold p</text>\n";
    svg += "</svg>\n";
    return svg;
}

} // namespace kblaze

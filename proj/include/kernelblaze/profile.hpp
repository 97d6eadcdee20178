#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "kernelblaze/errors.hpp"
#include "kernelblaze/util.hpp"

namespace kblaze {

/// One profiled kernel invocation. `metrics` holds throughput/occupancy
/// style percentages; `stall_breakdown` holds stall-reason fractions keyed
/// without their "stall." prefix.
struct KernelProfile {
    std::string kernel_name;
    std::int64_t invocation_index = 0;
    std::int64_t elapsed_cycles = 1;
    std::map<std::string, double> metrics;
    std::map<std::string, double> stall_breakdown;
};

/// Ordered per-invocation profiling record; order matches execution order.
struct ProfileReport {
    std::vector<KernelProfile> kernels;
    std::string source_tag = "sim";

    bool empty() const { return kernels.empty(); }
};

inline std::int64_t total_elapsed_cycles(const ProfileReport& report) {
    if (report.empty()) throw Error(ErrorCode::EmptyProfile, "report has no kernel invocations");
    std::int64_t total = 0;
    for (const auto& k : report.kernels) total += k.elapsed_cycles;
    return total;
}

/// Per-step reward: cycle ratio of the pre-action program to the candidate.
inline double compute_reward(const ProfileReport& previous, const ProfileReport& candidate) {
    return static_cast<double>(total_elapsed_cycles(previous)) /
           static_cast<double>(total_elapsed_cycles(candidate));
}

inline double speedup_vs_baseline(std::int64_t baseline_cycles, const ProfileReport& candidate) {
    if (baseline_cycles < 1) throw Error(ErrorCode::InvalidSpec, "baseline_cycles must be >= 1");
    return static_cast<double>(baseline_cycles) /
           static_cast<double>(total_elapsed_cycles(candidate));
}

namespace detail {

inline double parse_double_field(const std::string& field, int row, const char* what) {
    char* end = nullptr;
    double v = std::strtod(field.c_str(), &end);
    if (end == field.c_str() || *end != '\0')
        throw Error(ErrorCode::MalformedProfile,
                    std::string("row ") + std::to_string(row) + ": bad " + what + " '" + field + "'");
    return v;
}

inline std::int64_t parse_int_field(const std::string& field, int row, const char* what) {
    char* end = nullptr;
    long long v = std::strtoll(field.c_str(), &end, 10);
    if (end == field.c_str() || *end != '\0')
        throw Error(ErrorCode::MalformedProfile,
                    std::string("row ") + std::to_string(row) + ": bad " + what + " '" + field + "'");
    return v;
}

} // namespace detail

inline constexpr const char* kProfileCsvHeader = "kernel_name,invocation_index,elapsed_cycles,metric,value";

/// Parses the canonical profile CSV. One row per (invocation, metric); rows
/// for one invocation must be contiguous; the metric column may be empty for
/// a cycles-only invocation. "stall."-prefixed metrics route to the stall
/// breakdown.
inline ProfileReport parse_profile_report(const std::string& text, std::string source_tag = "sim") {
    std::vector<std::string> lines = split(text, '\n');
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty() || trim(lines[0]) != kProfileCsvHeader)
        throw Error(ErrorCode::MalformedProfile, "missing or bad header row");

    ProfileReport report;
    report.source_tag = std::move(source_tag);

    KernelProfile* current = nullptr;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const int row = static_cast<int>(i) + 1;
        if (trim(lines[i]).empty()) continue;
        std::vector<std::string> cols = split(lines[i], ',');
        if (cols.size() != 5)
            throw Error(ErrorCode::MalformedProfile,
                        "row " + std::to_string(row) + ": expected 5 columns, got " +
                            std::to_string(cols.size()));

        const std::string& name = cols[0];
        std::int64_t invocation = detail::parse_int_field(cols[1], row, "invocation_index");
        std::int64_t cycles = detail::parse_int_field(cols[2], row, "elapsed_cycles");
        if (invocation < 0)
            throw Error(ErrorCode::MalformedProfile,
                        "row " + std::to_string(row) + ": negative invocation_index");
        if (cycles < 1)
            throw Error(ErrorCode::MalformedProfile,
                        "row " + std::to_string(row) + ": elapsed_cycles must be >= 1");

        const bool continues = current != nullptr && current->kernel_name == name &&
                               current->invocation_index == invocation;
        if (!continues) {
            for (const auto& k : report.kernels)
                if (k.kernel_name == name && k.invocation_index == invocation)
                    throw Error(ErrorCode::MalformedProfile,
                                "row " + std::to_string(row) + ": rows for invocation (" + name +
                                    ", " + std::to_string(invocation) + ") are not contiguous");
            report.kernels.push_back({name, invocation, cycles, {}, {}});
            current = &report.kernels.back();
        } else if (current->elapsed_cycles != cycles) {
            throw Error(ErrorCode::MalformedProfile,
                        "row " + std::to_string(row) + ": elapsed_cycles disagrees within invocation");
        }

        const std::string& metric = cols[3];
        if (metric.empty()) continue;
        double value = detail::parse_double_field(cols[4], row, "value");
        if (metric.rfind("stall.", 0) == 0)
            current->stall_breakdown[metric.substr(6)] = value;
        else
            current->metrics[metric] = value;
    }

    if (report.kernels.empty()) throw Error(ErrorCode::EmptyProfile, "no data rows");
    return report;
}

/// Canonical CSV emission (inverse of parse). Metrics are written sorted by
/// key and floats with 6 significant digits, so output is byte-deterministic.
inline std::string profile_to_csv(const ProfileReport& report) {
    std::string out = kProfileCsvHeader;
    out.push_back('\n');
    for (const auto& k : report.kernels) {
        const std::string prefix = k.kernel_name + "," + std::to_string(k.invocation_index) + "," +
                                   std::to_string(k.elapsed_cycles) + ",";
        if (k.metrics.empty() && k.stall_breakdown.empty()) {
            out += prefix + ",\n";
            continue;
        }
        for (const auto& [key, value] : k.metrics)
            out += prefix + key + "," + format_float6(value) + "\n";
        for (const auto& [key, value] : k.stall_breakdown)
            out += prefix + "stall." + key + "," + format_float6(value) + "\n";
    }
    return out;
}

} // namespace kblaze

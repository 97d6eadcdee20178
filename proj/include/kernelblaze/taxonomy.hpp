#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace kblaze {

/// Closed bottleneck taxonomy. Custom labels are allowed with an "x-"
/// prefix so agent-discovered categories never collide with the fixed set.
inline constexpr std::array<std::string_view, 12> kBottleneckTaxonomy = {
    "dram_bandwidth_bound", "l2_bound",           "shared_memory_bound",
    "compute_fp_bound",     "compute_int_bound",  "latency_stall_bound",
    "occupancy_limited",    "launch_overhead_bound", "sync_overhead_bound",
    "divergence_bound",     "register_pressure_bound", "balanced",
};

inline bool is_taxonomy_label(std::string_view label) {
    for (auto name : kBottleneckTaxonomy)
        if (name == label) return true;
    return false;
}

inline bool is_slug_text(std::string_view text) {
    if (text.empty()) return false;
    for (char c : text) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
        if (!ok) return false;
    }
    return true;
}

inline bool is_valid_bottleneck_label(std::string_view label) {
    if (is_taxonomy_label(label)) return true;
    return label.size() > 2 && label.substr(0, 2) == "x-" && is_slug_text(label.substr(2));
}

/// Coerces an arbitrary agent-supplied label into the valid space: taxonomy
/// labels pass through, anything else becomes an "x-" custom label.
inline std::string normalize_bottleneck_label(std::string_view label) {
    if (is_taxonomy_label(label)) return std::string(label);
    if (label.size() > 2 && label.substr(0, 2) == "x-" && is_slug_text(label.substr(2)))
        return std::string(label);
    std::string slug;
    for (char c : label) {
        if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
            slug.push_back(c);
        } else if (c >= 'A' && c <= 'Z') {
            slug.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if (!slug.empty() && slug.back() != '_') {
            slug.push_back('_');
        }
    }
    while (!slug.empty() && slug.back() == '_') slug.pop_back();
    if (slug.empty()) slug = "unlabeled";
    return "x-" + slug;
}

/// Classification result: primary/secondary bottleneck plus the metric
/// values that drove the decision.
struct PerformanceSignature {
    std::string primary_bottleneck;
    std::optional<std::string> secondary_bottleneck;
    std::map<std::string, double> evidence;

    bool operator==(const PerformanceSignature& other) const {
        return primary_bottleneck == other.primary_bottleneck &&
               secondary_bottleneck == other.secondary_bottleneck;
    }
};

} // namespace kblaze

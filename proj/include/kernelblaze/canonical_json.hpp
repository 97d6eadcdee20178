#pragma once

#include <string>

#include <json.hpp>

#include "kernelblaze/util.hpp"

namespace kblaze {

namespace detail {

inline void dump_canonical_impl(const nlohmann::json& value, std::string& out, int indent,
                                int depth) {
    auto newline = [&](int d) {
        if (indent < 0) return;
        out.push_back('\n');
        out.append(static_cast<std::size_t>(indent * d), ' ');
    };
    switch (value.type()) {
        case nlohmann::json::value_t::object: {
            if (value.empty()) {
                out += "{}";
                return;
            }
            out.push_back('{');
            bool first = true;
            for (auto it = value.cbegin(); it != value.cend(); ++it) {
                if (!first) out.push_back(',');
                first = false;
                newline(depth + 1);
                out += nlohmann::json(it.key()).dump();
                out += indent < 0 ? ":" : ": ";
                dump_canonical_impl(it.value(), out, indent, depth + 1);
            }
            newline(depth);
            out.push_back('}');
            return;
        }
        case nlohmann::json::value_t::array: {
            if (value.empty()) {
                out += "[]";
                return;
            }
            out.push_back('[');
            bool first = true;
            for (const auto& item : value) {
                if (!first) out.push_back(',');
                first = false;
                newline(depth + 1);
                dump_canonical_impl(item, out, indent, depth + 1);
            }
            newline(depth);
            out.push_back(']');
            return;
        }
        case nlohmann::json::value_t::number_float:
            out += format_float6(value.get<double>());
            return;
        default:
            out += value.dump();
            return;
    }
}

} // namespace detail

/// Deterministic JSON serialization: keys sorted (nlohmann object order),
/// floats at 6 significant digits. indent < 0 emits a single line.
inline std::string dump_canonical(const nlohmann::json& value, int indent = -1) {
    std::string out;
    detail::dump_canonical_impl(value, out, indent, 0);
    if (indent >= 0) out.push_back('\n');
    return out;
}

} // namespace kblaze

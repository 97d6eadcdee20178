#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kernelblaze/errors.hpp"

namespace kblaze {

/// Canonical float formatting used in every serialized artifact: 6
/// significant digits, shortest form ("%.6g"). All on-disk floats go
/// through this so byte-level determinism holds across runs.
inline std::string format_float6(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", value);
    return buf;
}

/// Slug rule: lowercase, non-alphanumerics collapse to single underscores,
/// no leading/trailing underscore.
inline std::string slugify(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_sep = false;
    for (char c : text) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            if (pending_sep && !out.empty()) out.push_back('_');
            pending_sep = false;
            out.push_back(static_cast<char>(std::tolower(uc)));
        } else {
            pending_sep = true;
        }
    }
    return out;
}

inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (char c : data) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

/// Wall-clock abstraction so reproducibility runs can pin timestamps.
struct Clock {
    std::optional<std::string> frozen;

    static Clock realtime() { return Clock{}; }
    static Clock frozen_at(std::string timestamp) { return Clock{std::move(timestamp)}; }

    std::string now_rfc3339() const {
        if (frozen) return *frozen;
        std::time_t t = std::time(nullptr);
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }
};

inline constexpr const char* kFrozenTimestamp = "2025-01-01T00:00:00Z";

enum class Severity { Info, Warning };

struct Event {
    Severity severity = Severity::Info;
    std::string code;
    std::string message;
};

/// Collects non-fatal diagnostics (dropped items, size-cap warnings).
struct EventLog {
    std::vector<Event> entries;

    void warn(std::string code, std::string message) {
        entries.push_back({Severity::Warning, std::move(code), std::move(message)});
    }
    void info(std::string code, std::string message) {
        entries.push_back({Severity::Info, std::move(code), std::move(message)});
    }
    bool has(std::string_view code) const {
        return std::any_of(entries.begin(), entries.end(),
                           [&](const Event& e) { return e.code == code; });
    }
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + path);
}

inline std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(text.substr(start));
            break;
        }
        parts.emplace_back(text.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

inline std::string trim(std::string_view text) {
    std::size_t b = 0, e = text.size();
    while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
    return std::string(text.substr(b, e - b));
}

} // namespace kblaze

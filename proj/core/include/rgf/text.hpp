#pragma once

#include <charconv>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "rgf/error.hpp"

namespace rgf {

/// Shortest decimal form that round-trips the double. Used by every file
/// writer so artifacts are byte-stable.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Fixed-precision decimal form, e.g. score lines like "PLXDC2 (0.499)".
inline std::string format_fixed(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return std::string(buf);
}

inline double parse_double(std::string_view s, const std::string& what) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc{} && res.ptr == s.data() + s.size(),
            "invalid number in " + what + ": '" + std::string(s) + "'");
    return v;
}

inline long long parse_int(std::string_view s, const std::string& what) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc{} && res.ptr == s.data() + s.size(),
            "invalid integer in " + what + ": '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
    return s.substr(b, e - b);
}

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// Lines of a text file with trailing '\r'/'\n' stripped; a trailing empty
/// line is dropped.
std::vector<std::string> read_lines(const std::string& path);

}  // namespace rgf

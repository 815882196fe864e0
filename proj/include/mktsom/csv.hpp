#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mktsom/error.hpp"

namespace mktsom::csv {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) noexcept { return std::isnan(v); }

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// Plain comma split; the formats this library reads never quote fields.
inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = line.find(sep, pos);
        if (next == std::string_view::npos) {
            out.push_back(trim(line.substr(pos)));
            break;
        }
        out.push_back(trim(line.substr(pos, next - pos)));
        pos = next + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    if (s.empty()) return std::nullopt;
    const std::string buf(s);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(buf.c_str(), &end);
    if (end != buf.c_str() + buf.size() || errno == ERANGE) return std::nullopt;
    return v;
}

// Empty field or a NaN literal is missing; anything else must parse.
inline std::optional<double> parse_cell(std::string_view s, bool& ok) {
    ok = true;
    if (s.empty() || s == "NaN" || s == "nan" || s == "NA") return kMissing;
    auto v = parse_double(s);
    if (!v) ok = false;
    return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
    if (s.empty()) return std::nullopt;
    const std::string buf(s);
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(buf.c_str(), &end, 10);
    if (end != buf.c_str() + buf.size() || errno == ERANGE) return std::nullopt;
    return v;
}

// Shortest text that round-trips, fixed across runs.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "NaN";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

struct Line {
    std::size_t number;  // 1-based
    std::string text;
};

// Non-empty lines of a file with their line numbers.
inline std::vector<Line> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("cannot open " + path.string());
    std::vector<Line> out;
    std::string text;
    std::size_t n = 0;
    while (std::getline(in, text)) {
        ++n;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (trim(text).empty()) continue;
        out.push_back({n, std::move(text)});
    }
    return out;
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ArtifactError("short write to " + path.string());
}

// Row-major grid as CSV without header; NaN cells are written as NaN.
inline std::string grid_to_csv(const std::vector<double>& values, std::size_t rows, std::size_t cols) {
    std::string out;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) out += ',';
            out += fmt(values[r * cols + c]);
        }
        out += '\n';
    }
    return out;
}

struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
};

inline Grid read_grid(const std::filesystem::path& path) {
    Grid g;
    for (const auto& line : read_lines(path)) {
        const auto cells = split(line.text);
        if (g.rows == 0) g.cols = cells.size();
        if (cells.size() != g.cols) throw ParseError(path.string(), line.number, "ragged grid row");
        for (auto c : cells) {
            bool ok = true;
            auto v = parse_cell(c, ok);
            if (!ok) throw ParseError(path.string(), line.number, "bad number '" + std::string(c) + "'");
            g.values.push_back(*v);
        }
        ++g.rows;
    }
    return g;
}

}  // namespace mktsom::csv

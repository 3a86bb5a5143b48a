#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "synthbase/errors.hpp"

namespace synthbase::csv {

/// Header plus raw string cells. Quoting is not supported; none of the
/// formats read here need it.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.emplace_back(trim(line.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline Table read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path);
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": empty file");
    t.header = split_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != t.header.size()) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(t.header.size()) + " fields, got " +
                              std::to_string(cells.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    return t;
}

/// Empty cells yield NaN so the caller can report them as gaps.
inline double parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nan("");
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw SchemaError("not a number: '" + std::string(s) + "'");
    }
    return v;
}

/// Shortest representation that reads back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) os << ',';
        os << cells[i];
    }
    os << '\n';
}

inline std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    return out;
}

}  // namespace synthbase::csv

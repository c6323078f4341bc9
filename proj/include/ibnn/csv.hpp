#pragma once

// Deterministic number formatting and small CSV helpers. %.17g round-trips
// doubles exactly, which the dump/re-score consistency contract relies on.

#include <cstdio>
#include <string>
#include <vector>

namespace ibnn {

inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace ibnn

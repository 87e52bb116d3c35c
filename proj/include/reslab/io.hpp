#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"

// Output plumbing shared by the CLI: provenance header, CSV and JSON writers.

namespace reslab {

inline constexpr const char* tool_name = "reslab";
inline constexpr const char* tool_version = "0.1.0";

// 64-bit FNV-1a
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Hash of the canonical (key-sorted, compact) form of a map spec.
inline std::string map_hash(const nlohmann::json& spec) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(spec.dump())));
    return buf;
}

struct Provenance {
    std::string command;
    std::string map_hash;
    nlohmann::json params = nlohmann::json::object();

    nlohmann::json to_json() const {
        return {{"tool", tool_name}, {"version", tool_version}, {"command", command}, {"map_hash", map_hash},
                {"params", params}};
    }
    std::string csv_line() const { return "# " + to_json().dump(); }
};

// Shortest round-trip decimal form.
inline std::string csv_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const Provenance& p, std::vector<std::string> columns) : columns_(std::move(columns)) {
        out_ << p.csv_line() << '\n';
        for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
        out_ << '\n';
    }

    template <class... Cells>
    void row(const Cells&... cells) {
        std::vector<std::string> v{cell(cells)...};
        if (v.size() != columns_.size()) throw std::logic_error("CSV row width does not match the header");
        for (std::size_t i = 0; i < v.size(); ++i) out_ << (i ? "," : "") << v[i];
        out_ << '\n';
    }

    void row_values(const std::vector<std::string>& v) {
        if (v.size() != columns_.size()) throw std::logic_error("CSV row width does not match the header");
        for (std::size_t i = 0; i < v.size(); ++i) out_ << (i ? "," : "") << v[i];
        out_ << '\n';
    }

    std::string str() const { return out_.str(); }

    static std::string cell(double v) { return csv_number(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    }
    static std::string cell(const char* s) { return cell(std::string(s)); }

private:
    std::vector<std::string> columns_;
    std::ostringstream out_;
};

// JSON document with the provenance object under "header".
inline std::string json_document(const Provenance& p, nlohmann::json body) {
    body["header"] = p.to_json();
    return body.dump(2) + "\n";
}

// Writes to path, or to stdout when path is empty or "-".
inline void write_output(const std::string& path, const std::string& content, std::ostream& stdout_stream) {
    if (path.empty() || path == "-") {
        stdout_stream << content;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open output file '" + path + "'");
    f << content;
    if (!f) throw InputError("failed writing output file '" + path + "'");
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("map spec not found: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace reslab

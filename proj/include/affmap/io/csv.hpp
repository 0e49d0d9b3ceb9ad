#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "affmap/core/error.hpp"

namespace affmap {

// Fixed, locale-independent float formatting so identical runs produce
// byte-identical files.
inline std::string csv_num(double v, int precision = 10) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return buf;
}

inline std::string csv_num(long v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%ld", v);
    return buf;
}

// Comma-separated writer with a fixed header; '\n' line endings, no quoting
// (fields must not contain commas).
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns)
        : file_(path, std::ios::binary), ncols_(columns.size()) {
        require(file_.good(), "cannot open ", path.string(), " for writing");
        for (std::size_t i = 0; i < columns.size(); ++i)
            file_ << (i ? "," : "") << columns[i];
        file_ << "\n";
    }

    void row(const std::vector<std::string>& fields) {
        require(fields.size() == ncols_, "CSV row has ", fields.size(), " fields, expected ",
                ncols_);
        for (std::size_t i = 0; i < fields.size(); ++i)
            file_ << (i ? "," : "") << fields[i];
        file_ << "\n";
        require(file_.good(), "CSV write failed");
    }

    void flush() { file_.flush(); }

private:
    std::ofstream file_;
    std::size_t ncols_;
};

// Minimal reader for the artifact's own output (report aggregation): splits
// on commas, no quoting.
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return static_cast<int>(i);
        fail<ConfigError>("CSV has no column '", name, "'");
    }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    require<ConfigError>(f.good(), "cannot open CSV ", path.string());
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (true) {
            const auto pos = s.find(',', start);
            if (pos == std::string::npos) {
                out.push_back(s.substr(start));
                break;
            }
            out.push_back(s.substr(start, pos - start));
            start = pos + 1;
        }
        return out;
    };
    if (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        t.columns = split(line);
    }
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        t.rows.push_back(split(line));
        require<ConfigError>(t.rows.back().size() == t.columns.size(), "ragged CSV row in ",
                             path.string());
    }
    return t;
}

}  // namespace affmap

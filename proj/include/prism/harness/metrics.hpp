#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prism/core/errors.hpp"

namespace prism {

struct MetricRecord {
    std::string run_id;
    std::string model;
    std::string task;
    std::uint64_t seed = 0;
    int step = 0;
    double loss = 0;
    double accuracy = 0;
    double tokens_per_s = 0;

    bool operator==(const MetricRecord&) const = default;
};

inline constexpr const char* kMetricsHeader = "run_id,model,task,seed,step,loss,accuracy,tokens_per_s";

inline std::string g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string metric_line(const MetricRecord& r) {
    return r.run_id + ',' + r.model + ',' + r.task + ',' + std::to_string(r.seed) + ',' + std::to_string(r.step) + ',' +
           g6(r.loss) + ',' + g6(r.accuracy) + ',' + g6(r.tokens_per_s);
}

// Appends to path, writing the header first when the file is new or empty.
inline void write_metrics(const std::vector<MetricRecord>& records, const std::string& path) {
    for (auto& r : records) {
        if (!std::isfinite(r.loss)) throw NumericError("metric record with non-finite loss", r.step);
        if (!(r.accuracy >= 0 && r.accuracy <= 1)) throw DataError("metric accuracy outside [0, 1]");
    }
    std::error_code ec;
    const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw std::runtime_error("cannot open metrics file '" + path + "'");
    if (fresh) out << kMetricsHeader << '\n';
    for (auto& r : records) out << metric_line(r) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("write failed for metrics file '" + path + "'");
}

inline std::vector<MetricRecord> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw DataError("metrics file has an unexpected header");
    std::vector<MetricRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 8) throw DataError("metrics row needs 8 fields: " + line);
        try {
            out.push_back({f[0], f[1], f[2], std::stoull(f[3]), std::stoi(f[4]), std::stod(f[5]), std::stod(f[6]),
                           std::stod(f[7])});
        } catch (const std::logic_error&) {
            throw DataError("malformed metrics row: " + line);
        }
    }
    return out;
}

}  // namespace prism

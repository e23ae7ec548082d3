#pragma once

#include "heatkern/scenario.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace heatkern {

// CSV contract: comma separated, header row, 12 significant digits, LF endings
inline std::string format_sig(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns)
        : out_(path, std::ios::binary) {
        if (!out_) throw config_error("cannot open " + path.string());
        for (std::size_t i = 0; i < columns.size(); ++i)
            out_ << (i ? "," : "") << columns[i];
        out_ << "\n";
    }

    void row(const std::vector<double>& values) {
        for (std::size_t i = 0; i < values.size(); ++i)
            out_ << (i ? "," : "") << format_sig(values[i]);
        out_ << "\n";
    }

private:
    std::ofstream out_;
};

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open " + path.string());
    out << j.dump(2) << "\n";
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline json manifest_json(const json& config, std::uint64_t seed, int threads) {
    return json{{"config_hash", fnv1a(config.dump())},
                {"seed", seed},
                {"threads", threads},
                {"version", "heatkern 0.1.0"},
                {"inputs", config}};
}

}  // namespace heatkern

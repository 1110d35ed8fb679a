// SPDX-License-Identifier: Apache-2.0

#include "cyb/io_util.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cyb {

void atomic_write_file(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        fs::create_directories(target.parent_path());
    }
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + tmp.string());
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void ensure_directory(const std::string& path) {
    std::filesystem::create_directories(path);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

MetricsWriter::MetricsWriter(std::string path) : path_(std::move(path)) {
    namespace fs = std::filesystem;
    const fs::path p(path_);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path_, std::ios::trunc);  // start fresh for the run
    if (!f) throw std::runtime_error("cannot open metrics log: " + path_);
}

void MetricsWriter::record(long step, const std::string& split, const std::string& metric,
                           double value) {
    std::ofstream f(path_, std::ios::app);
    f << "{\"step\": " << step << ", \"split\": \"" << split << "\", \"metric\": \"" << metric
      << "\", \"value\": " << format_double(value) << "}\n";
}

}  // namespace cyb

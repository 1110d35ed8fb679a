// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

namespace cyb {

// Writes content to a temp file in the target directory and renames it into
// place, so readers never observe partial files.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

void ensure_directory(const std::string& path);

// Formats a double so that reparsing reproduces the exact value.
std::string format_double(double v);

// Appending newline-delimited JSON metric writer. Records are
// {"step": .., "split": .., "metric": .., "value": ..}.
class MetricsWriter {
  public:
    explicit MetricsWriter(std::string path);
    void record(long step, const std::string& split, const std::string& metric, double value);
    const std::string& path() const { return path_; }

  private:
    std::string path_;
};

}  // namespace cyb

// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary checkpoint container: a metadata JSON blob, named
// parameter tensors (shape + little-endian 32-bit floats), and training-state
// counters.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cyb {

struct CheckpointTensor {
    std::string name;
    std::vector<long> shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::string metadata_json;
    std::vector<CheckpointTensor> tensors;
    std::map<std::string, long long> counters;

    const CheckpointTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cyb

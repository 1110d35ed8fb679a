// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a single JSON tree per run, with ratio notation
// ("0:0:0:1") accepted for stop-time distributions. Parsing resolves derived
// fields (reserved token ids, pause counts, discount vectors) so the resolved
// snapshot is self-contained and re-parseable.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cyb/trainer.hpp"
#include "json.hpp"

namespace cyb {

// Validation failure carrying the offending field path.
struct ConfigError : std::runtime_error {
    std::string field;
    ConfigError(std::string field_path, const std::string& message)
        : std::runtime_error(field_path + ": " + message), field(std::move(field_path)) {}
};

struct ExperimentConfig {
    std::string run_id = "run";
    TrainConfig train;
    std::string corpus_path;       // optional: load documents instead of synthesizing
    std::string eval_corpus_path;  // optional
};

// Accepts "a:b:c:d" ratio strings or numeric arrays; normalizes to sum 1.
std::vector<double> parse_ratio(const nlohmann::json& value, const std::string& field);

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_file(const std::string& path);

// Recursive object merge; overlay scalars/arrays replace base values.
nlohmann::json json_deep_merge(nlohmann::json base, const nlohmann::json& overlay);

// Sets j["a"]["b"]["c"] for dotted path "a.b.c".
void json_set_dotted(nlohmann::json& j, const std::string& dotted,
                     const nlohmann::json& value);

}  // namespace cyb

// SPDX-License-Identifier: Apache-2.0

#include <string>

#include "cyb/config.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cyb;
using nlohmann::json;

namespace {

json smoke_json() {
    return json::parse(R"({
        "run_id": "smoke",
        "condition": "cyb",
        "loss": {"variant": "AP", "w_max": 4, "omega": "0:0:0:1"},
        "model": {"vocab_size": 48, "dim": 32, "n_layers": 2, "n_heads": 4,
                  "max_pause_slots": 3, "seed": 1},
        "packing": {"raw_len": 24},
        "train": {"lr_max": 0.5, "warmup_steps": 5, "total_steps": 20,
                  "batch_size": 4, "seed": 0, "eval_interval": 10, "eval_tokens": 512},
        "data": {"n_filler": 10, "n_keys": 4, "n_values": 6, "n_aliases": 2,
                 "hard_fraction": 0.08, "corpus_tokens": 4096, "doc_tokens": 256, "seed": 11}
    })");
}

}  // namespace

TEST_CASE("ratio parsing") {
    CHECK(parse_ratio(json("4:1:1:4"), "f") ==
          std::vector<double>{0.4, 0.1, 0.1, 0.4});
    CHECK(parse_ratio(json::parse("[1, 1]"), "f") == std::vector<double>{0.5, 0.5});
    CHECK(parse_ratio(json("0:0:0:1"), "f") == std::vector<double>{0, 0, 0, 1});
    CHECK_THROWS_AS(parse_ratio(json("a:b"), "f"), ConfigError);
    CHECK_THROWS_AS(parse_ratio(json("0:0"), "f"), ConfigError);
    CHECK_THROWS_AS(parse_ratio(json(3.5), "f"), ConfigError);
}

TEST_CASE("experiment parsing and derived fields") {
    const ExperimentConfig cfg = experiment_from_json(smoke_json());
    CHECK(cfg.run_id == "smoke");
    CHECK(cfg.train.condition == Condition::Cyb);
    CHECK(cfg.train.loss.variant == LossVariant::AP);
    CHECK(cfg.train.loss.omega.omega == std::vector<double>{0, 0, 0, 1});
    CHECK(cfg.train.dk.dk_token_id == 47);  // pinned to the top id
    CHECK(cfg.train.dk.vocab_size == 48);
    CHECK(cfg.train.packing.n_pauses == 3);  // derived from w_max
    CHECK(cfg.train.loss.gamma.gamma == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("baseline defaults") {
    json j = smoke_json();
    j["condition"] = "baseline";
    j.erase("loss");
    j["model"]["max_pause_slots"] = 3;
    const ExperimentConfig cfg = experiment_from_json(j);
    CHECK(cfg.train.loss.variant == LossVariant::TBYS);
    CHECK(cfg.train.loss.w_max == 1);
    CHECK(cfg.train.packing.n_pauses == 0);
}

TEST_CASE("missing rho for the variational variant names the field") {
    json j = smoke_json();
    j["loss"]["variant"] = "VA";
    try {
        experiment_from_json(j);
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(e.field == "loss.rho");
        CHECK(std::string(e.what()).find("loss.rho") != std::string::npos);
    }
}

TEST_CASE("cross-field validation carries a field path") {
    json j = smoke_json();
    j["packing"]["n_pauses"] = 1;  // w_max is 4
    try {
        experiment_from_json(j);
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(e.field == "packing.n_pauses");
    }
}

TEST_CASE("resolved snapshot round-trips to an equivalent config") {
    const ExperimentConfig cfg = experiment_from_json(smoke_json());
    const json resolved = experiment_to_json(cfg);
    const ExperimentConfig reparsed = experiment_from_json(resolved);
    CHECK(experiment_to_json(reparsed) == resolved);
}

TEST_CASE("VA and DP configs parse with their extras") {
    json j = smoke_json();
    j["loss"]["variant"] = "DP";
    j["loss"]["rho"] = "1:1:1:1";
    j["loss"]["alpha"] = 0.01;
    const ExperimentConfig cfg = experiment_from_json(j);
    CHECK(cfg.train.loss.variant == LossVariant::DP);
    CHECK(cfg.train.loss.alpha == 0.01);
    CHECK(cfg.train.loss.rho.rho == std::vector<double>{0.25, 0.25, 0.25, 0.25});
    const json resolved = experiment_to_json(cfg);
    CHECK(experiment_from_json(resolved).train.loss.rho.rho ==
          cfg.train.loss.rho.rho);
}

TEST_CASE("json helpers") {
    json base = json::parse(R"({"a": {"b": 1, "c": 2}, "d": 3})");
    const json overlay = json::parse(R"({"a": {"b": 9}, "e": 4})");
    const json merged = json_deep_merge(base, overlay);
    CHECK(merged.at("a").at("b") == 9);
    CHECK(merged.at("a").at("c") == 2);
    CHECK(merged.at("d") == 3);
    CHECK(merged.at("e") == 4);

    json j = json::object();
    json_set_dotted(j, "loss.omega", json("1:1:1:1"));
    json_set_dotted(j, "train.seed", json(5));
    CHECK(j.at("loss").at("omega") == "1:1:1:1");
    CHECK(j.at("train").at("seed") == 5);
}

// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests driving the built CLI binary.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cyb/io_util.hpp"
#include "cyb/pipeline.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "stdout.txt";
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + CYB_CLI_PATH + "\" " + args + " > \"" +
                            out.string() + "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = cyb::read_file(out.string());
    result.err = cyb::read_file(err.string());
    return result;
}

json smoke_config(const std::string& run_id) {
    json j;
    j["run_id"] = run_id;
    j["condition"] = "cyb";
    j["loss"] = {{"variant", "AP"}, {"w_max", 4}, {"omega", "0:0:0:1"}};
    j["model"] = {{"vocab_size", 48}, {"dim", 32},        {"n_layers", 1},
                  {"n_heads", 4},     {"max_pause_slots", 3}, {"seed", 1}};
    j["packing"] = {{"raw_len", 24}};
    j["train"] = {{"lr_max", 0.5},   {"warmup_steps", 4},  {"total_steps", 12},
                  {"batch_size", 4}, {"seed", 0},          {"eval_interval", 6},
                  {"eval_tokens", 400}};
    j["data"] = {{"n_filler", 10},      {"n_keys", 4},     {"n_values", 6},
                 {"n_aliases", 2},      {"hard_fraction", 0.08}, {"corpus_tokens", 4096},
                 {"doc_tokens", 256},   {"seed", 11}};
    return j;
}

class TempDir {
  public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

  private:
    fs::path path_;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream f(path);
    f << j.dump(2);
}

}  // namespace

TEST_CASE("train subcommand produces the run artifacts") {
    TempDir dir("cyb_cli_train");
    write_json(dir.path() / "cfg.json", smoke_config("smoke"));
    const auto result = run_cli("train --config \"" + (dir.path() / "cfg.json").string() +
                                    "\" --out \"" + (dir.path() / "runs").string() + "\"",
                                dir.path());
    CAPTURE(result.err);
    REQUIRE(result.exit_code == 0);
    const fs::path run_dir = dir.path() / "runs" / "smoke";
    CHECK(fs::exists(run_dir / "checkpoint.bin"));
    CHECK(fs::exists(run_dir / "config.resolved"));
    CHECK(fs::exists(run_dir / "metrics.jsonl"));
    CHECK(fs::exists(run_dir / "summary.json"));

    // Metrics lines parse and carry the contract fields.
    std::ifstream metrics(run_dir / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) {
        const json rec = json::parse(line);
        CHECK(rec.contains("step"));
        CHECK(rec.contains("split"));
        CHECK(rec.contains("metric"));
        CHECK(rec.contains("value"));
        ++lines;
    }
    CHECK(lines > 0);

    // The resolved config reparses and stays fixed under another resolve.
    const json resolved = json::parse(cyb::read_file((run_dir / "config.resolved").string()));
    CHECK(resolved.at("run_id") == "smoke");

    SUBCASE("deterministic reruns produce byte-identical metrics") {
        const auto rerun1 = run_cli("train --config \"" + (dir.path() / "cfg.json").string() +
                                        "\" --out \"" + (dir.path() / "runs_a").string() +
                                        "\" --deterministic",
                                    dir.path());
        const auto rerun2 = run_cli("train --config \"" + (dir.path() / "cfg.json").string() +
                                        "\" --out \"" + (dir.path() / "runs_b").string() +
                                        "\" --deterministic",
                                    dir.path());
        REQUIRE(rerun1.exit_code == 0);
        REQUIRE(rerun2.exit_code == 0);
        const auto a = cyb::read_file((dir.path() / "runs_a/smoke/metrics.jsonl").string());
        const auto b = cyb::read_file((dir.path() / "runs_b/smoke/metrics.jsonl").string());
        CHECK(!a.empty());
        CHECK(a == b);
    }

    SUBCASE("analyze on the checkpoint emits the five reports") {
        const auto analyzed =
            run_cli("analyze --checkpoint \"" + (run_dir / "checkpoint.bin").string() + "\"",
                    dir.path());
        CAPTURE(analyzed.err);
        REQUIRE(analyzed.exit_code == 0);
        for (const char* name : {"perplexity.json", "calibration.json", "latency.csv",
                                 "token_pause_table.csv", "token_coloring.jsonl"}) {
            CAPTURE(name);
            CHECK(fs::exists(run_dir / "reports" / name));
        }
        const json ppl =
            json::parse(cyb::read_file((run_dir / "reports" / "perplexity.json").string()));
        CHECK(ppl.at("overall").at("ppl").get<double>() > 1.0);
    }

    SUBCASE("analyze rejects an eval config with a different step budget") {
        json mismatched = smoke_config("smoke");
        mismatched["loss"]["w_max"] = 2;
        mismatched["loss"]["omega"] = "0:1";
        write_json(dir.path() / "bad_eval.json", mismatched);
        const auto analyzed =
            run_cli("analyze --checkpoint \"" + (run_dir / "checkpoint.bin").string() +
                        "\" --config \"" + (dir.path() / "bad_eval.json").string() + "\"",
                    dir.path());
        CHECK(analyzed.exit_code == 2);
    }
}

TEST_CASE("invalid config exits 2 and names the field") {
    TempDir dir("cyb_cli_invalid");
    json bad = smoke_config("bad");
    bad["loss"]["variant"] = "VA";  // VA without rho
    write_json(dir.path() / "cfg.json", bad);
    const auto result = run_cli(
        "train --config \"" + (dir.path() / "cfg.json").string() + "\"", dir.path());
    CHECK(result.exit_code == 2);
    CHECK(result.err.find("loss.rho") != std::string::npos);
}

TEST_CASE("sweep over a stop-prior grid") {
    TempDir dir("cyb_cli_sweep");
    json spec;
    spec["base"] = smoke_config("grid");
    spec["base"]["train"]["total_steps"] = 6;
    spec["base"]["train"]["eval_interval"] = 6;
    spec["grid"] = {{"loss.omega", {"0:0:0:1", "1:1:1:1", "4:1:1:4"}}};
    write_json(dir.path() / "sweep.json", spec);

    const auto result = run_cli("sweep --spec \"" + (dir.path() / "sweep.json").string() +
                                    "\" --out \"" + (dir.path() / "runs").string() + "\"",
                                dir.path());
    CAPTURE(result.err);
    REQUIRE(result.exit_code == 0);
    const std::string csv = cyb::read_file((dir.path() / "runs" / "summary.csv").string());
    CHECK(csv.find("run_id,status,ppl") == 0);
    int ok_rows = 0;
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
        if (line.find(",ok,") != std::string::npos) ++ok_rows;
    }
    CHECK(ok_rows == 3);
}

TEST_CASE("sweep with no runs exits 2") {
    TempDir dir("cyb_cli_sweep_empty");
    json spec;
    spec["base"] = smoke_config("none");
    write_json(dir.path() / "sweep.json", spec);
    const auto result = run_cli(
        "sweep --spec \"" + (dir.path() / "sweep.json").string() + "\"", dir.path());
    CHECK(result.exit_code == 2);
}

TEST_CASE("sweep records failures and keeps going") {
    TempDir dir("cyb_cli_sweep_fail");
    json spec;
    spec["base"] = smoke_config("mix");
    spec["base"]["train"]["total_steps"] = 6;
    spec["runs"] = json::array();
    spec["runs"].push_back({{"run_id", "ok-run"}});
    // Parses fine but dies at runtime: VA whose rho excludes reachable stops.
    spec["runs"].push_back({{"run_id", "doomed"},
                            {"loss", {{"variant", "VA"},
                                      {"omega", "0:0:0:1"},
                                      {"rho", "0:0:0:1"}}}});
    write_json(dir.path() / "sweep.json", spec);
    const auto result = run_cli("sweep --spec \"" + (dir.path() / "sweep.json").string() +
                                    "\" --out \"" + (dir.path() / "runs").string() + "\"",
                                dir.path());
    REQUIRE(result.exit_code == 0);
    CHECK(result.err.find("warning") != std::string::npos);
    const std::string csv = cyb::read_file((dir.path() / "runs" / "summary.csv").string());
    CHECK(csv.find("ok-run,ok,") != std::string::npos);
    CHECK(csv.find("doomed,failed,") != std::string::npos);
}

TEST_CASE("gen-corpus writes loadable text and binary corpora") {
    TempDir dir("cyb_cli_gen");
    write_json(dir.path() / "cfg.json", smoke_config("gen"));
    const auto text = run_cli("gen-corpus --config \"" + (dir.path() / "cfg.json").string() +
                                  "\" --out \"" + (dir.path() / "corpus.txt").string() + "\"",
                              dir.path());
    REQUIRE(text.exit_code == 0);
    const auto binary = run_cli("gen-corpus --config \"" + (dir.path() / "cfg.json").string() +
                                    "\" --out \"" + (dir.path() / "corpus.bin").string() + "\"",
                                dir.path());
    REQUIRE(binary.exit_code == 0);
    const auto text_docs = cyb::load_corpus_file((dir.path() / "corpus.txt").string());
    const auto bin_docs = cyb::load_corpus_file((dir.path() / "corpus.bin").string());
    CHECK(!text_docs.empty());
    CHECK(text_docs == bin_docs);

    SUBCASE("training from a corpus file") {
        json cfg = smoke_config("from-file");
        cfg["data"]["corpus_path"] = (dir.path() / "corpus.bin").string();
        cfg["train"]["total_steps"] = 6;
        cfg["train"]["eval_interval"] = 6;
        write_json(dir.path() / "file_cfg.json", cfg);
        const auto result =
            run_cli("train --config \"" + (dir.path() / "file_cfg.json").string() +
                        "\" --out \"" + (dir.path() / "runs").string() + "\"",
                    dir.path());
        CAPTURE(result.err);
        CHECK(result.exit_code == 0);
    }
}

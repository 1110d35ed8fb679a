// SPDX-License-Identifier: Apache-2.0
//
// Experiment front door: train / analyze / sweep / gen-corpus.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "cyb/checkpoint.hpp"
#include "cyb/config.hpp"
#include "cyb/io_util.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string default_out_root(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("CYB_OUT_ROOT"); env && *env) return env;
    return "runs";
}

std::vector<std::vector<cyb::TokenId>> train_documents(const cyb::ExperimentConfig& cfg) {
    if (!cfg.corpus_path.empty()) return cyb::load_corpus_file(cfg.corpus_path);
    return cyb::generate_synth_corpus(cfg.train.data);
}

std::vector<std::vector<cyb::TokenId>> eval_documents(const cyb::ExperimentConfig& cfg) {
    if (!cfg.eval_corpus_path.empty()) return cyb::load_corpus_file(cfg.eval_corpus_path);
    cyb::SynthTaskSpec spec = cfg.train.data;
    spec.seed = cyb::derive_seed(cfg.train.data.seed, 0xeba1);
    const long raw_len = cfg.train.packing.raw_len;
    const long want = cfg.train.eval_tokens * raw_len / std::max(1L, raw_len - 1) +
                      2L * spec.doc_tokens;
    spec.corpus_tokens = std::max<long>(spec.doc_tokens, want);
    return cyb::generate_synth_corpus(spec);
}

cyb::Checkpoint checkpoint_from_model(cyb::Model<float>& model, const json& resolved,
                                      long steps) {
    cyb::Checkpoint ckpt;
    ckpt.metadata_json = resolved.dump();
    for (const auto& ref : model.params()) {
        cyb::CheckpointTensor tensor;
        tensor.name = ref.name;
        tensor.shape = ref.shape;
        tensor.data.assign(ref.data, ref.data + ref.size);
        ckpt.tensors.push_back(std::move(tensor));
    }
    ckpt.counters["steps"] = steps;
    ckpt.counters["format_version"] = 1;
    return ckpt;
}

std::shared_ptr<cyb::Model<float>> model_from_checkpoint(const cyb::Checkpoint& ckpt,
                                                         cyb::ExperimentConfig& cfg_out) {
    cfg_out = cyb::experiment_from_json(json::parse(ckpt.metadata_json));
    auto model =
        std::make_shared<cyb::Model<float>>(cfg_out.train.model, cfg_out.train.dk);
    for (const auto& ref : model->params()) {
        const cyb::CheckpointTensor* tensor = ckpt.find(ref.name);
        if (!tensor) throw std::runtime_error("checkpoint is missing tensor " + ref.name);
        if (tensor->data.size() != ref.size) {
            throw std::runtime_error("checkpoint tensor size mismatch for " + ref.name);
        }
        std::copy(tensor->data.begin(), tensor->data.end(), ref.data);
    }
    return model;
}

int run_train(const std::string& config_path, const std::string& out_flag, long seed_override,
              bool deterministic) {
    cyb::ExperimentConfig cfg = cyb::load_experiment_file(config_path);
    if (seed_override >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(seed_override);
        cfg.train.model.seed = cyb::derive_seed(cfg.train.seed, 0x0de1);
    }
    if (deterministic) cfg.train.deterministic = true;

    const fs::path run_dir = fs::path(default_out_root(out_flag)) / cfg.run_id;
    cyb::ensure_directory(run_dir.string());
    const json resolved = cyb::experiment_to_json(cfg);
    cyb::atomic_write_file((run_dir / "config.resolved").string(), resolved.dump(2) + "\n");

    const auto docs = train_documents(cfg);
    const auto eval_docs = eval_documents(cfg);
    cyb::MetricsWriter metrics((run_dir / "metrics.jsonl").string());
    cyb::TrainOutput out = cyb::train(cfg.train, docs, eval_docs, &metrics);

    cyb::save_checkpoint((run_dir / "checkpoint.bin").string(),
                         checkpoint_from_model(*out.model, resolved, out.steps));

    json summary;
    summary["run_id"] = cfg.run_id;
    summary["status"] = "ok";
    summary["steps"] = out.steps;
    summary["train_loss"] = out.final_train_loss;
    summary["ppl"] = out.final_eval.perplexity.overall.ppl;
    summary["ppl_easy"] = out.final_eval.perplexity.easy.ppl;
    summary["ppl_hard"] = out.final_eval.perplexity.hard.ppl;
    summary["nll"] = out.final_eval.perplexity.overall.nll;
    summary["nll_easy"] = out.final_eval.perplexity.easy.nll;
    summary["nll_hard"] = out.final_eval.perplexity.hard.nll;
    summary["latency_mean"] = out.final_eval.latency_mean;
    summary["latency_sd"] = out.final_eval.latency_sd;
    summary["eval_tokens"] = out.final_eval.tokens;
    summary["clamped_events"] = out.clamped_events;
    cyb::atomic_write_file((run_dir / "summary.json").string(), summary.dump(2) + "\n");

    std::cout << "run " << cfg.run_id << ": eval ppl "
              << out.final_eval.perplexity.overall.ppl << " (hard "
              << out.final_eval.perplexity.hard.ppl << "), latency mean "
              << out.final_eval.latency_mean << "\n";
    return 0;
}

int run_analyze(const std::string& ckpt_path, const std::string& config_path,
                const std::string& out_flag, bool deterministic) {
    const cyb::Checkpoint ckpt = cyb::load_checkpoint(ckpt_path);
    cyb::ExperimentConfig run_cfg;
    auto model = model_from_checkpoint(ckpt, run_cfg);
    model->set_parallel(!deterministic);

    cyb::ExperimentConfig eval_cfg = run_cfg;
    if (!config_path.empty()) {
        eval_cfg = cyb::load_experiment_file(config_path);
        if (eval_cfg.train.model.vocab_size != run_cfg.train.model.vocab_size) {
            throw cyb::ConfigError("model.vocab_size",
                                   "eval config vocabulary does not match the checkpoint");
        }
        if (eval_cfg.train.loss.w_max != run_cfg.train.loss.w_max) {
            throw cyb::ConfigError("loss.w_max",
                                   "eval config step limit does not match the checkpoint");
        }
    }

    const cyb::VocabLayout layout = cyb::vocab_layout_for(run_cfg.train);
    const auto eval_docs = eval_documents(eval_cfg);
    const auto packed =
        cyb::pack_corpus(eval_docs, run_cfg.train.packing.raw_len, layout);
    const cyb::SynthVocab task_vocab = cyb::SynthVocab::from(eval_cfg.train.data);
    std::vector<std::vector<cyb::TokenClass>> classes;
    classes.reserve(packed.size());
    for (const auto& seq : packed) {
        classes.push_back(cyb::classify_targets(seq, task_vocab, layout.separator_token()));
    }

    cyb::EvalCollectOptions opts;
    opts.batch_size = run_cfg.train.batch_size;
    opts.expand_seed = cyb::derive_seed(eval_cfg.train.seed, 0xe7a1);
    opts.classes = &classes;
    const auto records = cyb::collect_eval_records(*model, packed, run_cfg.train.loss,
                                                   run_cfg.train.packing, layout, opts);

    fs::path out_dir;
    if (!out_flag.empty()) {
        out_dir = out_flag;
    } else {
        out_dir = fs::path(ckpt_path).parent_path() / "reports";
    }
    cyb::write_reports(records, run_cfg.train.loss.w_max, out_dir.string());
    std::cout << "analyzed " << records.size() << " tokens -> " << out_dir.string() << "\n";
    return 0;
}

std::string self_path(const char* argv0) {
    std::error_code ec;
    const fs::path link = fs::read_symlink("/proc/self/exe", ec);
    if (!ec) return link.string();
    return argv0;
}

int run_sweep(const std::string& spec_path, const std::string& out_flag, int jobs,
              bool deterministic, const char* argv0) {
    std::ifstream f(spec_path);
    if (!f) throw cyb::ConfigError("sweep", "cannot open sweep spec: " + spec_path);
    json spec;
    try {
        spec = json::parse(f);
    } catch (const json::parse_error& e) {
        throw cyb::ConfigError("sweep", std::string("JSON parse error: ") + e.what());
    }

    json base = json::object();
    if (spec.contains("base_path")) {
        std::ifstream bf(spec.at("base_path").get<std::string>());
        if (!bf) throw cyb::ConfigError("sweep.base_path", "cannot open base config");
        base = json::parse(bf);
    }
    if (spec.contains("base")) base = cyb::json_deep_merge(base, spec.at("base"));

    std::vector<json> run_configs;
    if (spec.contains("runs")) {
        for (const auto& overlay : spec.at("runs")) {
            run_configs.push_back(cyb::json_deep_merge(base, overlay));
        }
    }
    if (spec.contains("grid")) {
        const json& grid = spec.at("grid");
        std::vector<json> acc = {base};
        for (auto it = grid.begin(); it != grid.end(); ++it) {
            std::vector<json> next;
            for (const auto& cfg : acc) {
                for (const auto& value : it.value()) {
                    json copy = cfg;
                    cyb::json_set_dotted(copy, it.key(), value);
                    next.push_back(std::move(copy));
                }
            }
            acc = std::move(next);
        }
        for (auto& cfg : acc) run_configs.push_back(std::move(cfg));
    }
    if (run_configs.empty()) {
        throw cyb::ConfigError("sweep", "spec produced no runs (need \"runs\" or \"grid\")");
    }

    const std::string base_id = base.contains("run_id")
                                    ? base.at("run_id").get<std::string>()
                                    : std::string("sweep");
    for (std::size_t i = 0; i < run_configs.size(); ++i) {
        if (!run_configs[i].contains("run_id") ||
            run_configs[i].at("run_id") == json(base_id)) {
            run_configs[i]["run_id"] = base_id + "-" + std::to_string(i);
        }
        // Configs must parse before any run starts.
        cyb::experiment_from_json(run_configs[i]);
    }

    const std::string out_root = default_out_root(out_flag);
    cyb::ensure_directory(out_root);
    const std::string exe = self_path(argv0);

    struct RunRow {
        std::string run_id;
        bool ok = false;
    };
    std::vector<RunRow> rows(run_configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= run_configs.size()) return;
            const std::string run_id = run_configs[i].at("run_id").get<std::string>();
            rows[i].run_id = run_id;
            const fs::path run_dir = fs::path(out_root) / run_id;
            cyb::ensure_directory(run_dir.string());
            const fs::path cfg_path = run_dir / "config.json";
            cyb::atomic_write_file(cfg_path.string(), run_configs[i].dump(2) + "\n");
            std::string cmd = "\"" + exe + "\" train --config \"" + cfg_path.string() +
                              "\" --out \"" + out_root + "\"";
            if (deterministic) cmd += " --deterministic";
            cmd += " > \"" + (run_dir / "train.log").string() + "\" 2>&1";
            rows[i].ok = std::system(cmd.c_str()) == 0;
        }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::max(1, jobs);
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    std::ostringstream csv;
    csv << "run_id,status,ppl,ppl_easy,ppl_hard,latency_mean\n";
    int failures = 0;
    for (const auto& row : rows) {
        if (!row.ok) {
            ++failures;
            csv << row.run_id << ",failed,,,,\n";
            continue;
        }
        const fs::path summary_path = fs::path(out_root) / row.run_id / "summary.json";
        json summary = json::parse(cyb::read_file(summary_path.string()));
        csv << row.run_id << ",ok," << summary.at("ppl").get<double>() << ','
            << summary.at("ppl_easy").get<double>() << ','
            << summary.at("ppl_hard").get<double>() << ','
            << summary.at("latency_mean").get<double>() << '\n';
    }
    cyb::atomic_write_file((fs::path(out_root) / "summary.csv").string(), csv.str());
    std::cout << "sweep: " << rows.size() - failures << "/" << rows.size() << " runs ok, summary "
              << (fs::path(out_root) / "summary.csv").string() << "\n";
    if (failures > 0) {
        std::cerr << "warning: " << failures << " run(s) failed; see per-run train.log\n";
    }
    return 0;
}

int run_gen_corpus(const std::string& config_path, const std::string& out_path,
                   long seed_override) {
    cyb::ExperimentConfig cfg = cyb::load_experiment_file(config_path);
    if (seed_override >= 0) cfg.train.data.seed = static_cast<std::uint64_t>(seed_override);
    const auto docs = cyb::generate_synth_corpus(cfg.train.data);
    const bool binary = out_path.size() > 4 && out_path.substr(out_path.size() - 4) == ".bin";
    std::ostringstream buf;
    if (binary) {
        cyb::write_corpus_binary(docs, buf);
    } else {
        cyb::write_corpus_text(docs, buf);
    }
    cyb::atomic_write_file(out_path, buf.str());
    std::cout << "wrote " << docs.size() << " documents to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Catch-your-breath pause-token training experiments"};
    app.require_subcommand(1);

    std::string config_path, out_flag, ckpt_path, spec_path, corpus_out;
    long seed_override = -1;
    bool deterministic = false;
    int jobs = 1;

    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    train_cmd->add_option("--out", out_flag, "output root (default $CYB_OUT_ROOT or ./runs)");
    train_cmd->add_option("--seed", seed_override, "override train.seed");
    train_cmd->add_flag("--deterministic", deterministic, "serial kernels, fixed order");

    auto* analyze_cmd = app.add_subcommand("analyze", "write reports for a checkpoint");
    analyze_cmd->add_option("--checkpoint", ckpt_path, "checkpoint.bin path")->required();
    analyze_cmd->add_option("--config", config_path, "eval config (defaults to the run config)");
    analyze_cmd->add_option("--out", out_flag, "report directory");
    analyze_cmd->add_flag("--deterministic", deterministic, "serial kernels");

    auto* sweep_cmd = app.add_subcommand("sweep", "run a list or grid of configs");
    sweep_cmd->add_option("--spec", spec_path, "sweep spec (JSON)")->required();
    sweep_cmd->add_option("--out", out_flag, "output root");
    sweep_cmd->add_option("--jobs", jobs, "parallel runs");
    sweep_cmd->add_flag("--deterministic", deterministic, "forwarded to each run");

    auto* gen_cmd = app.add_subcommand("gen-corpus", "write a synthetic corpus to a file");
    gen_cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    gen_cmd->add_option("--out", corpus_out, "output path (.bin selects the binary format)")
        ->required();
    gen_cmd->add_option("--seed", seed_override, "override data.seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            return run_train(config_path, out_flag, seed_override, deterministic);
        }
        if (analyze_cmd->parsed()) {
            return run_analyze(ckpt_path, config_path, out_flag, deterministic);
        }
        if (sweep_cmd->parsed()) {
            return run_sweep(spec_path, out_flag, jobs, deterministic, argv[0]);
        }
        if (gen_cmd->parsed()) {
            return run_gen_corpus(config_path, corpus_out, seed_override);
        }
    } catch (const cyb::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}

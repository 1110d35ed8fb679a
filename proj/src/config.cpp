// SPDX-License-Identifier: Apache-2.0

#include "cyb/config.hpp"

#include <fstream>
#include <sstream>

namespace cyb {

using nlohmann::json;

std::vector<double> parse_ratio(const json& value, const std::string& field) {
    std::vector<double> parts;
    if (value.is_string()) {
        std::stringstream ss(value.get<std::string>());
        std::string item;
        while (std::getline(ss, item, ':')) {
            try {
                parts.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError(field, "cannot parse ratio component '" + item + "'");
            }
        }
    } else if (value.is_array()) {
        for (const auto& v : value) {
            if (!v.is_number()) throw ConfigError(field, "ratio entries must be numbers");
            parts.push_back(v.get<double>());
        }
    } else {
        throw ConfigError(field, "expected a ratio string like \"0:0:0:1\" or an array");
    }
    if (parts.empty()) throw ConfigError(field, "ratio must have at least one entry");
    double sum = 0.0;
    for (double p : parts) {
        if (!(p >= 0.0)) throw ConfigError(field, "ratio entries must be >= 0");
        sum += p;
    }
    if (!(sum > 0.0)) throw ConfigError(field, "ratio must have positive total mass");
    for (double& p : parts) p /= sum;
    return parts;
}

namespace {

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& field) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError(field, "invalid value type");
    }
}

const json empty_object = json::object();

const json& section(const json& j, const std::string& key) {
    if (!j.contains(key) || j.at(key).is_null()) return empty_object;
    if (!j.at(key).is_object()) throw ConfigError(key, "expected an object");
    return j.at(key);
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config", "top level must be an object");
    ExperimentConfig cfg;
    cfg.run_id = get_or<std::string>(j, "run_id", "run", "run_id");

    TrainConfig& t = cfg.train;
    try {
        t.condition = condition_from_string(
            get_or<std::string>(j, "condition", "cyb", "condition"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("condition", e.what());
    }

    // Loss section. Baseline defaults to the single-step cross-entropy.
    const json& jl = section(j, "loss");
    const bool baseline = t.condition == Condition::Baseline;
    t.loss.w_max = get_or<int>(jl, "w_max", baseline ? 1 : 4, "loss.w_max");
    if (t.loss.w_max < 1) throw ConfigError("loss.w_max", "must be >= 1");
    std::string variant_default = "AP";
    if (t.condition != Condition::Cyb) variant_default = "TBYS";
    try {
        t.loss.variant = loss_variant_from_string(
            get_or<std::string>(jl, "variant", variant_default, "loss.variant"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("loss.variant", e.what());
    }
    if (jl.contains("omega") && !jl.at("omega").is_null()) {
        try {
            t.loss.omega = make_stop_prior(parse_ratio(jl.at("omega"), "loss.omega"));
        } catch (const std::invalid_argument& e) {
            throw ConfigError("loss.omega", e.what());
        }
    } else {
        std::vector<double> omega(t.loss.w_max, 0.0);
        omega.back() = 1.0;
        t.loss.omega = StopPrior{std::move(omega)};
    }
    const json& jg = section(jl, "gamma");
    DiscountKind kind = DiscountKind::Constant;
    try {
        kind = discount_kind_from_string(
            get_or<std::string>(jg, "kind", "constant", "loss.gamma.kind"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("loss.gamma.kind", e.what());
    }
    const double gamma0 = get_or<double>(jg, "gamma0", 1.0, "loss.gamma.gamma0");
    try {
        t.loss.gamma = make_discount(kind, gamma0, t.loss.w_max);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("loss.gamma.gamma0", e.what());
    }
    const bool needs_rho =
        t.loss.variant == LossVariant::VA || t.loss.variant == LossVariant::DP;
    if (jl.contains("rho") && !jl.at("rho").is_null()) {
        t.loss.rho.rho = parse_ratio(jl.at("rho"), "loss.rho");
        if (static_cast<int>(t.loss.rho.rho.size()) != t.loss.w_max) {
            throw ConfigError("loss.rho", "length must equal loss.w_max");
        }
    } else if (needs_rho) {
        throw ConfigError("loss.rho", "required for variants VA and DP");
    }
    t.loss.alpha = get_or<double>(jl, "alpha", 0.0, "loss.alpha");
    if (static_cast<int>(t.loss.omega.omega.size()) != t.loss.w_max) {
        throw ConfigError("loss.omega", "length must equal loss.w_max");
    }

    // Model section.
    const json& jm = section(j, "model");
    t.model.vocab_size = get_or<int>(jm, "vocab_size", 64, "model.vocab_size");
    t.model.dim = get_or<int>(jm, "dim", 64, "model.dim");
    t.model.n_layers = get_or<int>(jm, "n_layers", 2, "model.n_layers");
    t.model.n_heads = get_or<int>(jm, "n_heads", 4, "model.n_heads");
    t.model.max_pause_slots =
        get_or<int>(jm, "max_pause_slots", std::max(0, t.loss.w_max - 1),
                    "model.max_pause_slots");
    t.model.use_pause_key_offset =
        get_or<bool>(jm, "use_pause_key_offset", false, "model.use_pause_key_offset");
    t.model.seed = get_or<std::uint64_t>(jm, "seed", 1, "model.seed");
    t.model.rope_base = get_or<double>(jm, "rope_base", 10000.0, "model.rope_base");

    // DK head. The token id is pinned to the top of the vocabulary.
    const json& jd = section(j, "dk");
    t.dk.psi_prime_dk = get_or<double>(jd, "psi_prime_dk", 0.9, "dk.psi_prime_dk");
    t.dk.vocab_size = t.model.vocab_size;
    t.dk.dk_token_id = t.model.vocab_size - 1;

    // Packing.
    const json& jp = section(j, "packing");
    t.packing.raw_len = get_or<int>(jp, "raw_len", 64, "packing.raw_len");
    try {
        t.packing.recipe = recipe_from_string(
            get_or<std::string>(jp, "recipe", "constant", "packing.recipe"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("packing.recipe", e.what());
    }
    t.packing.n_pauses =
        get_or<int>(jp, "n_pauses", baseline ? 0 : t.loss.w_max - 1, "packing.n_pauses");

    // Training.
    const json& jt = section(j, "train");
    t.lr_max = get_or<double>(jt, "lr_max", 1.0, "train.lr_max");
    t.warmup_steps = get_or<int>(jt, "warmup_steps", 100, "train.warmup_steps");
    t.total_steps = get_or<int>(jt, "total_steps", 1000, "train.total_steps");
    t.batch_size = get_or<int>(jt, "batch_size", 8, "train.batch_size");
    t.seed = get_or<std::uint64_t>(jt, "seed", 0, "train.seed");
    t.eval_interval = get_or<int>(jt, "eval_interval", 200, "train.eval_interval");
    t.eval_tokens = get_or<long>(jt, "eval_tokens", 20000, "train.eval_tokens");
    t.deterministic = get_or<bool>(jt, "deterministic", false, "train.deterministic");
    t.weight_decay = get_or<double>(jt, "weight_decay", 0.0, "train.weight_decay");
    t.adam_beta1 = get_or<double>(jt, "adam_beta1", 0.9, "train.adam_beta1");
    t.adam_beta2 = get_or<double>(jt, "adam_beta2", 0.999, "train.adam_beta2");
    t.adam_eps = get_or<double>(jt, "adam_eps", 1e-8, "train.adam_eps");

    // Data.
    const json& jdata = section(j, "data");
    t.data.n_filler = get_or<int>(jdata, "n_filler", 20, "data.n_filler");
    t.data.n_keys = get_or<int>(jdata, "n_keys", 12, "data.n_keys");
    t.data.n_values = get_or<int>(jdata, "n_values", 16, "data.n_values");
    t.data.n_aliases = get_or<int>(jdata, "n_aliases", 8, "data.n_aliases");
    t.data.hard_fraction = get_or<double>(jdata, "hard_fraction", 0.1, "data.hard_fraction");
    t.data.two_hop_fraction =
        get_or<double>(jdata, "two_hop_fraction", 0.5, "data.two_hop_fraction");
    t.data.filler_noise = get_or<double>(jdata, "filler_noise", 0.05, "data.filler_noise");
    t.data.recall_window = get_or<int>(jdata, "recall_window", 24, "data.recall_window");
    t.data.corpus_tokens = get_or<long>(jdata, "corpus_tokens", 100000, "data.corpus_tokens");
    t.data.doc_tokens = get_or<int>(jdata, "doc_tokens", 1024, "data.doc_tokens");
    t.data.seed = get_or<std::uint64_t>(jdata, "seed", 7, "data.seed");
    cfg.corpus_path = get_or<std::string>(jdata, "corpus_path", "", "data.corpus_path");
    cfg.eval_corpus_path =
        get_or<std::string>(jdata, "eval_corpus_path", "", "data.eval_corpus_path");

    // Cross-field validation, surfaced with the field path up front. The
    // validators lead with a dotted field path ("loss.omega: ..." or
    // "packing.n_pauses must ...").
    try {
        validate_train_config(t);
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        const auto space = msg.find(' ');
        std::string head = space == std::string::npos ? msg : msg.substr(0, space);
        if (!head.empty() && head.back() == ':') head.pop_back();
        if (head.find('.') != std::string::npos) {
            throw ConfigError(head, msg);
        }
        throw ConfigError("config", msg);
    }
    return cfg;
}

json experiment_to_json(const ExperimentConfig& cfg) {
    const TrainConfig& t = cfg.train;
    json j;
    j["run_id"] = cfg.run_id;
    j["condition"] = to_string(t.condition);
    j["loss"] = {
        {"variant", to_string(t.loss.variant)},
        {"w_max", t.loss.w_max},
        {"omega", t.loss.omega.omega},
        {"gamma", {{"kind", to_string(t.loss.gamma.kind)}, {"gamma0", t.loss.gamma.gamma0}}},
        {"alpha", t.loss.alpha},
    };
    if (!t.loss.rho.rho.empty()) j["loss"]["rho"] = t.loss.rho.rho;
    j["model"] = {
        {"vocab_size", t.model.vocab_size},
        {"dim", t.model.dim},
        {"n_layers", t.model.n_layers},
        {"n_heads", t.model.n_heads},
        {"max_pause_slots", t.model.max_pause_slots},
        {"use_pause_key_offset", t.model.use_pause_key_offset},
        {"seed", t.model.seed},
        {"rope_base", t.model.rope_base},
    };
    j["dk"] = {{"psi_prime_dk", t.dk.psi_prime_dk},
               {"dk_token_id", t.dk.dk_token_id},
               {"vocab_size", t.dk.vocab_size}};
    j["packing"] = {{"raw_len", t.packing.raw_len},
                    {"n_pauses", t.packing.n_pauses},
                    {"recipe", to_string(t.packing.recipe)}};
    j["train"] = {
        {"lr_max", t.lr_max},
        {"warmup_steps", t.warmup_steps},
        {"total_steps", t.total_steps},
        {"batch_size", t.batch_size},
        {"seed", t.seed},
        {"eval_interval", t.eval_interval},
        {"eval_tokens", t.eval_tokens},
        {"deterministic", t.deterministic},
        {"weight_decay", t.weight_decay},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
    };
    j["data"] = {
        {"n_filler", t.data.n_filler},
        {"n_keys", t.data.n_keys},
        {"n_values", t.data.n_values},
        {"n_aliases", t.data.n_aliases},
        {"hard_fraction", t.data.hard_fraction},
        {"two_hop_fraction", t.data.two_hop_fraction},
        {"filler_noise", t.data.filler_noise},
        {"recall_window", t.data.recall_window},
        {"corpus_tokens", t.data.corpus_tokens},
        {"doc_tokens", t.data.doc_tokens},
        {"seed", t.data.seed},
    };
    if (!cfg.corpus_path.empty()) j["data"]["corpus_path"] = cfg.corpus_path;
    if (!cfg.eval_corpus_path.empty()) j["data"]["eval_corpus_path"] = cfg.eval_corpus_path;
    return j;
}

ExperimentConfig load_experiment_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config", "cannot open config file: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("JSON parse error: ") + e.what());
    }
    return experiment_from_json(j);
}

json json_deep_merge(json base, const json& overlay) {
    if (!base.is_object() || !overlay.is_object()) return overlay;
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (base.contains(it.key())) {
            base[it.key()] = json_deep_merge(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
    return base;
}

void json_set_dotted(json& j, const std::string& dotted, const json& value) {
    json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', start);
        if (dot == std::string::npos) {
            (*cur)[dotted.substr(start)] = value;
            return;
        }
        cur = &(*cur)[dotted.substr(start, dot - start)];
        start = dot + 1;
    }
}

}  // namespace cyb

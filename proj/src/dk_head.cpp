// SPDX-License-Identifier: Apache-2.0

#include "cyb/dk_head.hpp"

#include <cmath>
#include <stdexcept>

namespace cyb {

void validate_dk_config(const DKConfig& cfg) {
    if (cfg.vocab_size < 2) {
        throw std::invalid_argument("dk.vocab_size must be >= 2");
    }
    if (cfg.dk_token_id < 0 || cfg.dk_token_id >= cfg.vocab_size) {
        throw std::invalid_argument("dk.dk_token_id must lie inside the vocabulary");
    }
    if (!(cfg.psi_prime_dk > 0.0 && cfg.psi_prime_dk < 1.0)) {
        throw std::invalid_argument("dk.psi_prime_dk must lie in (0,1)");
    }
}

DKSplit split_and_renormalize(const std::vector<double>& y, const DKConfig& cfg,
                              double epsilon) {
    if (static_cast<int>(y.size()) != cfg.vocab_size) {
        throw std::invalid_argument("distribution length must equal vocab_size");
    }
    const double d = y[cfg.dk_token_id];
    if (d >= 1.0 - epsilon) {
        throw std::domain_error("DK mass saturated: distribution has no room for real tokens");
    }
    DKSplit out;
    out.d = d;
    out.y_hat.resize(y.size());
    const double inv = 1.0 / (1.0 - d);
    for (std::size_t j = 0; j < y.size(); ++j) {
        out.y_hat[j] = y[j] * inv;
    }
    out.y_hat[cfg.dk_token_id] = 0.0;
    return out;
}

std::vector<double> prior_shift_vector(const DKConfig& cfg) {
    validate_dk_config(cfg);
    const double v = static_cast<double>(cfg.vocab_size);
    const double dk_shift = std::log(cfg.psi_prime_dk * v);
    const double other_shift = std::log((1.0 - cfg.psi_prime_dk) / (v - 1.0) * v);
    std::vector<double> shift(cfg.vocab_size, other_shift);
    shift[cfg.dk_token_id] = dk_shift;
    return shift;
}

void prior_shift_logits(std::vector<double>& logits, const DKConfig& cfg) {
    const std::vector<double> shift = prior_shift_vector(cfg);
    if (logits.size() != shift.size()) {
        throw std::invalid_argument("logit length must equal vocab_size");
    }
    for (std::size_t j = 0; j < logits.size(); ++j) {
        logits[j] += shift[j];
    }
}

}  // namespace cyb

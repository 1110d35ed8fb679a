// SPDX-License-Identifier: Apache-2.0
//
// The don't-know head: a repurposed vocabulary token carries the abstention
// probability d. The next-token distribution is renormalized with the DK
// entry removed, and fine-tuning starts from a shifted logit prior so the
// model can actually emit DK mass.

#pragma once

#include <vector>

namespace cyb {

struct DKConfig {
    int dk_token_id = 0;
    double psi_prime_dk = 0.9;  // desired DK prior mass
    int vocab_size = 0;
};

void validate_dk_config(const DKConfig& cfg);

struct DKSplit {
    double d = 0.0;              // abstention probability, y[dk]
    std::vector<double> y_hat;   // renormalized distribution, y_hat[dk] == 0
};

// d = y[dk]; y_hat[j] = y[j] / (1 - d) for j != dk. Throws when the DK mass
// saturates (y[dk] >= 1 - epsilon).
DKSplit split_and_renormalize(const std::vector<double>& y, const DKConfig& cfg,
                              double epsilon = 1e-9);

// The additive logit shift log(psi'/psi) under a uniform pretraining prior:
// dk gets log(psi'_dk |V|), every other index log((1 - psi'_dk)/(|V|-1) |V|).
std::vector<double> prior_shift_vector(const DKConfig& cfg);

// logits + prior shift, in place.
void prior_shift_logits(std::vector<double>& logits, const DKConfig& cfg);

}  // namespace cyb

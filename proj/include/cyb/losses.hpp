// SPDX-License-Identifier: Apache-2.0
//
// The CYB loss family over per-step target probabilities t and abstention
// probabilities d:
//
//   base loss      -log E_{i~s}[gamma_i t_i]          (s = readout distribution)
//   CYB-AP         base loss with a full stop prior and monotone discounts
//   CYB-VA         -E_{i~s}[log t_i] + KL(s || rho)   (negative ELBO, gamma == 1)
//   CYB-DP         base loss + alpha * KL(rho || s)
//   TBYS           base loss with d pinned to (1,..,1,0): cross-entropy at the
//                  final step only
//
// All losses are differentiable with respect to (t, d); gradients are exact
// analytic expressions, checked against finite differences in the tests.

#pragma once

#include <string>
#include <vector>

#include "cyb/stop_process.hpp"

namespace cyb {

enum class LossVariant { AP, VA, DP, TBYS };

enum class DiscountKind { Constant, Linear, Exponential };

// Non-increasing per-step accuracy discount.
struct DiscountSchedule {
    std::vector<double> gamma;
    DiscountKind kind = DiscountKind::Constant;
    double gamma0 = 1.0;

    bool is_unit() const {
        for (double g : gamma)
            if (g != 1.0) return false;
        return true;
    }
};

// Stop-time distribution the model is encouraged to internalize (VA/DP).
struct SelfStopPrior {
    std::vector<double> rho;
};

struct LossConfig {
    LossVariant variant = LossVariant::AP;
    StopPrior omega;
    DiscountSchedule gamma;
    SelfStopPrior rho;   // VA/DP only
    double alpha = 0.0;  // DP only
    int w_max = 1;
};

// constant: gamma_i = 1
// linear:   gamma_i = 1 - (i-1)(1-gamma0), clamped below at 0
// exponential: gamma_i = gamma0^(i-1)
DiscountSchedule make_discount(DiscountKind kind, double gamma0, int w_max);

DiscountKind discount_kind_from_string(const std::string& s);
std::string to_string(DiscountKind kind);
LossVariant loss_variant_from_string(const std::string& s);
std::string to_string(LossVariant v);

// Validates cross-field constraints (VA: unit gamma + one-hot omega at w_max;
// DP: one-hot omega; TBYS: no trainable d). Throws std::invalid_argument.
void validate_loss_config(const LossConfig& cfg);

// The fixed abstain profile TBYS uses: (1,...,1,0).
AbstainProfile tbys_abstain_profile(int w_max);

struct LossResult {
    double value = 0.0;
    std::vector<double> s;          // readout distribution used by the loss
    bool clamped = false;           // expected likelihood hit the underflow floor
    bool kl_support_violation = false;  // a KL term was infinite
};

struct LossGradients {
    std::vector<double> d_t;   // dloss/dt_i
    std::vector<double> d_dk;  // dloss/dd_i; final entry is 0 (d pinned there)
};

// KL(p || q) with the 0 log 0 convention. Infinite divergences are reported
// via the flag and the value saturates to +infinity.
struct KlResult {
    double value = 0.0;
    bool support_violation = false;
};
KlResult kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// -log sum_i s_i gamma_i t_i. Works for AP and TBYS (pass the TBYS profile
// as dk). The sum is floored at 1e-300 before the log; the clamp is reported.
LossResult cyb_loss(const StepTargets& t, const AbstainProfile& dk, const LossConfig& cfg);

// -sum_i s_i log t_i + KL(s || rho), with omega implicitly one-hot at w_max
// and gamma == 1.
LossResult cyb_va_loss(const StepTargets& t, const AbstainProfile& dk, const SelfStopPrior& rho);

// cyb_loss + alpha * KL(rho || s), omega implicitly one-hot at w_max.
LossResult cyb_dp_loss(const StepTargets& t, const AbstainProfile& dk, const SelfStopPrior& rho,
                       double alpha, const DiscountSchedule& gamma);

// Dispatches on cfg.variant.
LossResult loss_value(const StepTargets& t, const AbstainProfile& dk, const LossConfig& cfg);

// Exact analytic gradients of the selected variant. Inside gradients only,
// probabilities inside logs/ratios are floored at 1e-12 so support violations
// yield large finite gradients instead of NaNs; loss_value still reports the
// exact (possibly infinite) value.
LossGradients loss_gradients(const StepTargets& t, const AbstainProfile& dk,
                             const LossConfig& cfg);

}  // namespace cyb

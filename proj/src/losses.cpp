// SPDX-License-Identifier: Apache-2.0

#include "cyb/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cyb {

namespace {

constexpr double kUnderflowFloor = 1e-300;
// Floor applied to probabilities inside gradient logs/ratios only; reported
// loss values stay exact.
constexpr double kGradFloor = 1e-12;

StopPrior one_hot_final(int w_max) {
    std::vector<double> omega(w_max, 0.0);
    omega.back() = 1.0;
    return StopPrior{std::move(omega)};
}

void check_targets(const StepTargets& t, int w_max) {
    if (static_cast<int>(t.t.size()) != w_max) {
        throw std::invalid_argument("step targets must have one entry per step");
    }
    for (double v : t.t) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("step targets must lie in [0,1]");
        }
    }
}

void check_self_prior(const SelfStopPrior& rho, int w_max) {
    if (static_cast<int>(rho.rho.size()) != w_max) {
        throw std::invalid_argument("self-stop prior must have one entry per step");
    }
    double sum = 0.0;
    for (double v : rho.rho) {
        if (!(v >= 0.0)) throw std::invalid_argument("self-stop prior entries must be >= 0");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("self-stop prior must sum to 1");
    }
}

bool is_one_hot_final(const StopPrior& omega) {
    if (omega.omega.empty()) return false;
    for (std::size_t i = 0; i + 1 < omega.omega.size(); ++i) {
        if (omega.omega[i] != 0.0) return false;
    }
    return omega.omega.back() == 1.0;
}

}  // namespace

DiscountSchedule make_discount(DiscountKind kind, double gamma0, int w_max) {
    if (!(gamma0 > 0.0 && gamma0 <= 1.0)) {
        throw std::invalid_argument("gamma0 must lie in (0,1]");
    }
    if (w_max < 1) {
        throw std::invalid_argument("w_max must be >= 1");
    }
    DiscountSchedule sched;
    sched.kind = kind;
    sched.gamma0 = gamma0;
    sched.gamma.resize(w_max);
    for (int i = 0; i < w_max; ++i) {
        switch (kind) {
            case DiscountKind::Constant:
                sched.gamma[i] = 1.0;
                break;
            case DiscountKind::Linear:
                sched.gamma[i] = std::max(0.0, 1.0 - i * (1.0 - gamma0));
                break;
            case DiscountKind::Exponential:
                sched.gamma[i] = std::pow(gamma0, i);
                break;
        }
    }
    return sched;
}

DiscountKind discount_kind_from_string(const std::string& s) {
    if (s == "constant") return DiscountKind::Constant;
    if (s == "linear") return DiscountKind::Linear;
    if (s == "exponential") return DiscountKind::Exponential;
    throw std::invalid_argument("unknown discount kind: " + s);
}

std::string to_string(DiscountKind kind) {
    switch (kind) {
        case DiscountKind::Constant: return "constant";
        case DiscountKind::Linear: return "linear";
        case DiscountKind::Exponential: return "exponential";
    }
    return "constant";
}

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "AP" || s == "ap") return LossVariant::AP;
    if (s == "VA" || s == "va") return LossVariant::VA;
    if (s == "DP" || s == "dp") return LossVariant::DP;
    if (s == "TBYS" || s == "tbys") return LossVariant::TBYS;
    throw std::invalid_argument("unknown loss variant: " + s);
}

std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::AP: return "AP";
        case LossVariant::VA: return "VA";
        case LossVariant::DP: return "DP";
        case LossVariant::TBYS: return "TBYS";
    }
    return "AP";
}

void validate_loss_config(const LossConfig& cfg) {
    if (cfg.w_max < 1) throw std::invalid_argument("loss.w_max must be >= 1");
    if (cfg.omega.w_max() != cfg.w_max) {
        throw std::invalid_argument("loss.omega length must equal w_max");
    }
    if (static_cast<int>(cfg.gamma.gamma.size()) != cfg.w_max) {
        throw std::invalid_argument("loss.gamma length must equal w_max");
    }
    switch (cfg.variant) {
        case LossVariant::AP:
        case LossVariant::TBYS:
            break;
        case LossVariant::VA:
            if (!cfg.gamma.is_unit()) {
                throw std::invalid_argument(
                    "loss.gamma: VA requires a constant unit discount (the prior subsumes it)");
            }
            if (!is_one_hot_final(cfg.omega)) {
                throw std::invalid_argument(
                    "loss.omega: VA requires all stop mass on the final step");
            }
            check_self_prior(cfg.rho, cfg.w_max);
            break;
        case LossVariant::DP:
            if (!is_one_hot_final(cfg.omega)) {
                throw std::invalid_argument(
                    "loss.omega: DP requires all stop mass on the final step");
            }
            if (!(cfg.alpha >= 0.0)) {
                throw std::invalid_argument("loss.alpha must be >= 0");
            }
            check_self_prior(cfg.rho, cfg.w_max);
            break;
    }
}

AbstainProfile tbys_abstain_profile(int w_max) {
    std::vector<double> dk(w_max, 1.0);
    dk.back() = 0.0;
    return AbstainProfile{std::move(dk)};
}

KlResult kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) {
        throw std::invalid_argument("KL divergence requires equal-length distributions");
    }
    KlResult out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) {
            out.support_violation = true;
            out.value = std::numeric_limits<double>::infinity();
            return out;
        }
        out.value += p[i] * std::log(p[i] / q[i]);
    }
    if (out.value < 0.0 && out.value > -1e-15) out.value = 0.0;  // rounding
    return out;
}

LossResult cyb_loss(const StepTargets& t, const AbstainProfile& dk, const LossConfig& cfg) {
    check_targets(t, cfg.w_max);
    AbstainProfile tbys;
    const AbstainProfile* profile = &dk;
    if (cfg.variant == LossVariant::TBYS) {
        tbys = tbys_abstain_profile(cfg.w_max);
        profile = &tbys;
    }
    LossResult out;
    ReadoutDistribution s = readout_distribution(*profile, cfg.omega);
    double z = 0.0;
    for (int i = 0; i < cfg.w_max; ++i) {
        z += s.s[i] * cfg.gamma.gamma[i] * t.t[i];
    }
    if (z < kUnderflowFloor) {
        z = kUnderflowFloor;
        out.clamped = true;
    }
    out.value = -std::log(z);
    out.s = std::move(s.s);
    return out;
}

LossResult cyb_va_loss(const StepTargets& t, const AbstainProfile& dk, const SelfStopPrior& rho) {
    const int w = static_cast<int>(dk.dk.size());
    check_targets(t, w);
    check_self_prior(rho, w);
    LossResult out;
    ReadoutDistribution s = readout_distribution(dk, one_hot_final(w));
    double expected_nll = 0.0;
    for (int i = 0; i < w; ++i) {
        if (s.s[i] == 0.0) continue;
        if (t.t[i] <= 0.0) {
            expected_nll = std::numeric_limits<double>::infinity();
            out.clamped = true;
            break;
        }
        expected_nll -= s.s[i] * std::log(t.t[i]);
    }
    KlResult kl = kl_divergence(s.s, rho.rho);
    out.kl_support_violation = kl.support_violation;
    out.value = expected_nll + kl.value;
    out.s = std::move(s.s);
    return out;
}

LossResult cyb_dp_loss(const StepTargets& t, const AbstainProfile& dk, const SelfStopPrior& rho,
                       double alpha, const DiscountSchedule& gamma) {
    const int w = static_cast<int>(dk.dk.size());
    check_self_prior(rho, w);
    LossConfig base;
    base.variant = LossVariant::AP;
    base.omega = one_hot_final(w);
    base.gamma = gamma;
    base.w_max = w;
    LossResult out = cyb_loss(t, dk, base);
    KlResult kl = kl_divergence(rho.rho, out.s);
    out.kl_support_violation = kl.support_violation;
    out.value += alpha * kl.value;
    return out;
}

LossResult loss_value(const StepTargets& t, const AbstainProfile& dk, const LossConfig& cfg) {
    switch (cfg.variant) {
        case LossVariant::AP:
        case LossVariant::TBYS:
            return cyb_loss(t, dk, cfg);
        case LossVariant::VA:
            return cyb_va_loss(t, dk, cfg.rho);
        case LossVariant::DP:
            return cyb_dp_loss(t, dk, cfg.rho, cfg.alpha, cfg.gamma);
    }
    throw std::logic_error("unreachable loss variant");
}

LossGradients loss_gradients(const StepTargets& t, const AbstainProfile& dk,
                             const LossConfig& cfg) {
    const int w = cfg.w_max;
    check_targets(t, w);
    LossGradients g;
    g.d_t.assign(w, 0.0);
    g.d_dk.assign(w, 0.0);

    if (cfg.variant == LossVariant::TBYS) {
        // -log(gamma_w t_w): only the final target carries gradient, d is fixed.
        const double tw = std::max(t.t[w - 1], kGradFloor);
        g.d_t[w - 1] = -1.0 / tw;
        return g;
    }

    const StopPrior omega =
        cfg.variant == LossVariant::AP ? cfg.omega : one_hot_final(w);
    const ReadoutDistribution s = readout_distribution(dk, omega);
    const std::vector<double> jac = readout_jacobian_dk(dk, omega);
    auto j = [&](int i, int k) { return jac[static_cast<std::size_t>(i) * w + k]; };

    if (cfg.variant == LossVariant::VA) {
        for (int k = 0; k < w; ++k) {
            g.d_t[k] = -s.s[k] / std::max(t.t[k], kGradFloor);
        }
        for (int k = 0; k + 1 < w; ++k) {
            double acc = 0.0;
            for (int i = 0; i < w; ++i) {
                if (j(i, k) == 0.0) continue;
                const double log_s = std::log(std::max(s.s[i], kGradFloor));
                const double log_rho = std::log(std::max(cfg.rho.rho[i], kGradFloor));
                const double log_t = std::log(std::max(t.t[i], kGradFloor));
                acc += j(i, k) * (log_s - log_rho - log_t + 1.0);
            }
            g.d_dk[k] = acc;
        }
        return g;
    }

    // AP and DP share the -log Z core.
    double z = 0.0;
    for (int i = 0; i < w; ++i) z += s.s[i] * cfg.gamma.gamma[i] * t.t[i];
    z = std::max(z, kUnderflowFloor);
    for (int k = 0; k < w; ++k) {
        g.d_t[k] = -s.s[k] * cfg.gamma.gamma[k] / z;
    }
    for (int k = 0; k + 1 < w; ++k) {
        double acc = 0.0;
        for (int i = 0; i < w; ++i) {
            acc += cfg.gamma.gamma[i] * t.t[i] * j(i, k);
        }
        g.d_dk[k] = -acc / z;
    }
    if (cfg.variant == LossVariant::DP && cfg.alpha > 0.0) {
        for (int k = 0; k + 1 < w; ++k) {
            double acc = 0.0;
            for (int i = 0; i < w; ++i) {
                if (cfg.rho.rho[i] == 0.0) continue;
                acc += cfg.rho.rho[i] / std::max(s.s[i], kGradFloor) * j(i, k);
            }
            g.d_dk[k] -= cfg.alpha * acc;
        }
    }
    return g;
}

}  // namespace cyb

// SPDX-License-Identifier: Apache-2.0

#include "cyb/stop_process.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cyb {

namespace {
constexpr double kSumTolerance = 1e-9;
}

StopPrior make_stop_prior(std::vector<double> omega) {
    if (omega.empty()) {
        throw std::invalid_argument("stop prior must cover at least one step");
    }
    double sum = 0.0;
    for (double w : omega) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw std::invalid_argument("stop prior entries must be finite and >= 0");
        }
        sum += w;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        throw std::invalid_argument("stop prior must sum to 1, got " + std::to_string(sum));
    }
    for (double& w : omega) {
        w /= sum;
    }
    return StopPrior{std::move(omega)};
}

AbstainProfile make_abstain_profile(std::vector<double> dk) {
    if (dk.empty()) {
        throw std::invalid_argument("abstain profile must cover at least one step");
    }
    for (double d : dk) {
        if (!(d >= 0.0 && d <= 1.0)) {
            throw std::invalid_argument("abstain probabilities must lie in [0,1]");
        }
    }
    if (dk.back() != 0.0) {
        throw std::invalid_argument("abstain probability at the final step must be 0");
    }
    return AbstainProfile{std::move(dk)};
}

HazardVector hazard_from_prior(const StopPrior& prior) {
    const int w = prior.w_max();
    std::vector<double> hazard(w);
    double suffix = 0.0;
    // Suffix sums accumulated from the right so each hazard uses the exact
    // remaining mass.
    std::vector<double> suffixes(w);
    for (int i = w - 1; i >= 0; --i) {
        suffix += prior.omega[i];
        suffixes[i] = suffix;
    }
    for (int i = 0; i < w; ++i) {
        hazard[i] = suffixes[i] > 0.0 ? prior.omega[i] / suffixes[i] : 1.0;
        if (hazard[i] > 1.0) hazard[i] = 1.0;
    }
    return HazardVector{std::move(hazard)};
}

ReadoutDistribution readout_distribution(const AbstainProfile& dk, const StopPrior& prior) {
    const int w = prior.w_max();
    if (static_cast<int>(dk.dk.size()) != w) {
        throw std::invalid_argument("abstain profile and stop prior must have equal length");
    }
    if (dk.dk.back() != 0.0) {
        throw std::invalid_argument("abstain probability at the final step must be 0");
    }
    std::vector<double> s(w);
    double tail = std::accumulate(prior.omega.begin(), prior.omega.end(), 0.0);
    double abstain_prod = 1.0;  // prod_{j<i} d[j]
    for (int i = 0; i < w; ++i) {
        tail -= prior.omega[i];  // sum_{j>i} omega[j]
        const double tail_mass = tail > 0.0 ? tail : 0.0;
        s[i] = (prior.omega[i] + (1.0 - dk.dk[i]) * tail_mass) * abstain_prod;
        abstain_prod *= dk.dk[i];
    }
    return ReadoutDistribution{std::move(s)};
}

ReadoutDistribution readout_distribution_hazard_form(const AbstainProfile& dk,
                                                     const HazardVector& hazard) {
    const int w = static_cast<int>(hazard.hazard.size());
    if (static_cast<int>(dk.dk.size()) != w) {
        throw std::invalid_argument("abstain profile and hazard vector must have equal length");
    }
    std::vector<double> s(w);
    double abstain_prod = 1.0;
    double survive_prod = 1.0;
    for (int i = 0; i < w; ++i) {
        const double h = hazard.hazard[i];
        const double d = dk.dk[i];
        s[i] = abstain_prod * survive_prod * (d * h + (1.0 - d));
        abstain_prod *= d;
        survive_prod *= (1.0 - h);
    }
    return ReadoutDistribution{std::move(s)};
}

double expected_latency(const ReadoutDistribution& s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.s.size(); ++i) {
        acc += static_cast<double>(i) * s.s[i];
    }
    return acc;
}

std::vector<double> readout_jacobian_dk(const AbstainProfile& dk, const StopPrior& prior) {
    const int w = prior.w_max();
    if (static_cast<int>(dk.dk.size()) != w) {
        throw std::invalid_argument("abstain profile and stop prior must have equal length");
    }
    std::vector<double> jac(static_cast<std::size_t>(w) * w, 0.0);
    std::vector<double> tail(w);
    double acc = 0.0;
    for (int i = w - 1; i >= 0; --i) {
        tail[i] = acc;  // sum_{j>i} omega[j]
        acc += prior.omega[i];
    }
    // s[i] = A_i * P_i with A_i = omega[i] + (1-d[i]) tail[i], P_i = prod_{j<i} d[j].
    for (int i = 0; i < w; ++i) {
        const double a_i = prior.omega[i] + (1.0 - dk.dk[i]) * tail[i];
        // k == i: dA_i/dd_i * P_i. The final column stays zero: d at the last
        // step is a constraint, not a parameter.
        if (i < w - 1) {
            double p_i = 1.0;
            for (int j = 0; j < i; ++j) p_i *= dk.dk[j];
            jac[static_cast<std::size_t>(i) * w + i] = -tail[i] * p_i;
        }
        // k < i: A_i * prod_{j<i, j!=k} d[j], formed directly so d[k] = 0 does
        // not require a division.
        for (int k = 0; k < i; ++k) {
            double prod = 1.0;
            for (int j = 0; j < i; ++j) {
                if (j != k) prod *= dk.dk[j];
            }
            jac[static_cast<std::size_t>(i) * w + k] = a_i * prod;
        }
    }
    return jac;
}

int StopStepSampler::sample(const AbstainProfile& dk, const StopPrior& prior) {
    return sample(dk, hazard_from_prior(prior));
}

int StopStepSampler::sample(const AbstainProfile& dk, const HazardVector& hazard) {
    const int w = static_cast<int>(hazard.hazard.size());
    for (int i = 0; i < w; ++i) {
        if (rng_.next_unit() >= dk.dk[i]) {
            return i + 1;  // model answers
        }
        if (rng_.next_unit() < hazard.hazard[i]) {
            return i + 1;  // world stops anyway
        }
    }
    return w;  // unreachable: dk.back() == 0 forces an answer at the last step
}

int sample_stop_step(const AbstainProfile& dk, const StopPrior& prior, std::uint64_t seed) {
    StopStepSampler sampler(seed);
    return sampler.sample(dk, prior);
}

}  // namespace cyb

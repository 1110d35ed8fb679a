// SPDX-License-Identifier: Apache-2.0
//
// Sequential stopping process for per-token adaptive computation.
//
// A token gets up to w_max forward steps. The world imposes a stop after
// W ~ Cat(omega) steps; before that, the model may abstain at step i with
// probability d[i] to request one more step. The step at which a result is
// read out is the random variable S with distribution s (the readout
// distribution). Steps are 1-based in the math here; a "pause count" is
// step - 1.

#pragma once

#include <cstdint>
#include <vector>

#include "cyb/rng.hpp"

namespace cyb {

// World stop-time distribution omega over steps 1..w_max.
struct StopPrior {
    std::vector<double> omega;

    int w_max() const { return static_cast<int>(omega.size()); }
};

// Conditional stop probability per step: Pr(W = i | W >= i).
struct HazardVector {
    std::vector<double> hazard;
};

// Model abstention probability per step. The final entry must be 0: the
// model cannot delay past the last step.
struct AbstainProfile {
    std::vector<double> dk;
};

// Distribution over the step at which a result is emitted.
struct ReadoutDistribution {
    std::vector<double> s;
};

// Probability assigned to the ground-truth token at each step.
struct StepTargets {
    std::vector<double> t;
};

// Validates entries >= 0 and sum == 1 within 1e-9, then renormalizes the sum
// away exactly. Throws std::invalid_argument on violation.
StopPrior make_stop_prior(std::vector<double> omega);

// Validates entries in [0,1] and dk.back() == 0.
AbstainProfile make_abstain_profile(std::vector<double> dk);

// hazard[i] = omega[i] / sum_{j>=i} omega[j]. Steps with zero suffix mass are
// unreachable; their hazard is defined as 1.
HazardVector hazard_from_prior(const StopPrior& prior);

// s[i] = (omega[i] + (1 - d[i]) * sum_{j>i} omega[j]) * prod_{j<i} d[j].
ReadoutDistribution readout_distribution(const AbstainProfile& dk, const StopPrior& prior);

// Product-hazard form of the same distribution:
// s[i] = prod_{j<i} d[j] * prod_{j<i} (1 - hazard[j]) * (d[i] hazard[i] + 1 - d[i]).
ReadoutDistribution readout_distribution_hazard_form(const AbstainProfile& dk,
                                                     const HazardVector& hazard);

// Expected number of pause steps consumed: sum_i (i-1) * s[i].
double expected_latency(const ReadoutDistribution& s);

// d(s[i]) / d(dk[k]) for all i, k. Row-major [w_max x w_max]; the final
// column is zero (dk at the last step is pinned to 0).
std::vector<double> readout_jacobian_dk(const AbstainProfile& dk, const StopPrior& prior);

// Draws one trajectory of the decision process and returns the 1-based stop
// step. Deterministic given the seed.
int sample_stop_step(const AbstainProfile& dk, const StopPrior& prior, std::uint64_t seed);

// Stateful sampler for drawing many trajectories from one seeded stream.
class StopStepSampler {
  public:
    explicit StopStepSampler(std::uint64_t seed) : rng_(seed) {}
    int sample(const AbstainProfile& dk, const StopPrior& prior);
    int sample(const AbstainProfile& dk, const HazardVector& hazard);

  private:
    SplitMix64 rng_;
};

}  // namespace cyb

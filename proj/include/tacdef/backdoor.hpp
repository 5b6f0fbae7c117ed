#pragma once

#include <cstddef>
#include <vector>

#include "tacdef/core.hpp"
#include "tacdef/nn.hpp"

// Synthetic additive-trigger attack and its evaluation: poisoning by
// duplicating triggered rows relabeled to the target class, clean accuracy /
// attack success rate / defense efficacy rate, and the oracle TAC (mean
// latent activation difference between triggered and clean inputs).

namespace tacdef::backdoor {

struct Trigger {
  Vector delta;                   // additive trigger, length d_in
  std::size_t target_class = 0;   // the poisoned class p
  double poison_rate = 0.1;       // fraction of training rows duplicated
};

/// `magnitude` on the first `num_coords` input coordinates, zero elsewhere.
Trigger make_sparse_trigger(std::size_t d_in, std::size_t num_coords, double magnitude,
                            std::size_t target_class, double poison_rate);

struct Metrics {
  double acc = 0.0;  // clean accuracy
  double asr = 0.0;  // attack success rate
};

/// Mean activation difference in the latent layer between triggered and clean
/// inputs; an oracle, it needs the true trigger.
struct TacVector {
  Vector values;  // length d_emb
};

/// x + delta elementwise. Inputs are abstract feature vectors; no clipping.
Vector apply_trigger(const Vector& x, const Trigger& trig);

/// Argmax class of the softmax output, ties broken toward the smaller index.
std::size_t predict(const nn::MlpParams& params, const Vector& x);

/// Duplicate round(poison_rate * n) uniformly sampled rows with the trigger
/// applied and the label set to the target class, then shuffle. Duplication
/// keeps every clean sample, so both loss terms of the poisoned objective
/// range over the full data.
nn::Dataset poison_dataset(const nn::Dataset& data, const Trigger& trig, Rng& rng);

/// acc over clean rows; asr over triggered rows whose true class differs from
/// the target (the standard denominator).
Metrics evaluate(const nn::MlpParams& params, const nn::Dataset& test, const Trigger& trig);

/// Defense efficacy rate in [0,1]:
///   (max(0, asr_before - asr_after) - max(0, acc_before - acc_after) + 1) / 2.
double der(const Metrics& before, const Metrics& after);

/// Mean over rows of latent(x + delta) - latent(x).
TacVector oracle_tac_latent(const nn::MlpParams& params, const Matrix& inputs,
                            const Trigger& trig);

/// Overlap of the top-K coordinates of |s| and |tac|, K = max(1,
/// floor(fraction * d_emb)), ties broken toward the lower index.
double tac_coverage(const Vector& s, const TacVector& tac, double top_k_fraction);

}  // namespace tacdef::backdoor

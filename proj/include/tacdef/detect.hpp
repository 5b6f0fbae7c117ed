#pragma once

#include <cstddef>
#include <vector>

#include "tacdef/core.hpp"
#include "tacdef/qp.hpp"

// Poisoned-class identification: backdoor training pulls the poisoned
// decision boundary close to the clean classes, so the poisoned class needs
// an unusually small perturbation. Standardize the per-class L2 norms and
// flag small-side outliers below the threshold alpha.

namespace tacdef::detect {

struct DetectionReport {
  Vector norms;  // ||s_k||_2 per class, +inf for infeasible classes
  Vector z;      // standardized scores, +inf for infeasible classes
  double mean = 0.0;
  double std = 0.0;
  double alpha = 0.0;
  std::vector<std::size_t> poisoned_classes;  // ascending z, most anomalous first
  bool degenerate = false;  // std below epsilon or fewer than 2 finite norms
};

/// Mean and population standard deviation are taken over finite norms only.
/// Degenerate when fewer than 2 norms are finite or sigma <= 1e-12; a
/// degenerate report never flags any class.
DetectionReport standardize_norms(const std::vector<qp::PerturbationResult>& results);

/// All classes with z_k < alpha, sorted ascending by z.
std::vector<std::size_t> identify_poisoned(const DetectionReport& report, double alpha);

/// standardize_norms + identify_poisoned with the threshold recorded.
DetectionReport detect_poisoned(const std::vector<qp::PerturbationResult>& results,
                                double alpha);

}  // namespace tacdef::detect

#include "tacdef/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tacdef::detect {

namespace {
constexpr double kSigmaEpsilon = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

DetectionReport standardize_norms(const std::vector<qp::PerturbationResult>& results) {
  DetectionReport rep;
  rep.norms.reserve(results.size());
  for (const auto& r : results)
    rep.norms.push_back(r.infeasible ? kInf : norm2(r.s));

  std::size_t finite = 0;
  double sum = 0.0;
  for (double n : rep.norms) {
    if (std::isfinite(n)) {
      ++finite;
      sum += n;
    }
  }
  if (finite < 2) {
    rep.degenerate = true;
    rep.z.assign(rep.norms.size(), kInf);
    return rep;
  }

  rep.mean = sum / static_cast<double>(finite);
  double var = 0.0;
  for (double n : rep.norms) {
    if (std::isfinite(n)) {
      const double d = n - rep.mean;
      var += d * d;
    }
  }
  rep.std = std::sqrt(var / static_cast<double>(finite));

  if (rep.std <= kSigmaEpsilon) {
    rep.degenerate = true;
    rep.z.assign(rep.norms.size(), kInf);
    return rep;
  }

  rep.z.reserve(rep.norms.size());
  for (double n : rep.norms)
    rep.z.push_back(std::isfinite(n) ? (n - rep.mean) / rep.std : kInf);
  return rep;
}

std::vector<std::size_t> identify_poisoned(const DetectionReport& report, double alpha) {
  std::vector<std::size_t> flagged;
  if (report.degenerate) return flagged;
  for (std::size_t k = 0; k < report.z.size(); ++k)
    if (report.z[k] < alpha) flagged.push_back(k);
  std::sort(flagged.begin(), flagged.end(), [&](std::size_t a, std::size_t b) {
    if (report.z[a] != report.z[b]) return report.z[a] < report.z[b];
    return a < b;
  });
  return flagged;
}

DetectionReport detect_poisoned(const std::vector<qp::PerturbationResult>& results,
                                double alpha) {
  DetectionReport rep = standardize_norms(results);
  rep.alpha = alpha;
  rep.poisoned_classes = identify_poisoned(rep, alpha);
  return rep;
}

}  // namespace tacdef::detect

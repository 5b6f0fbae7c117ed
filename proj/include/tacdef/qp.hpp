#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tacdef/core.hpp"

// Minimal latent-space perturbation forcing every reference embedding into a
// target class:
//
//   minimize 1/2 ||s||^2   s.t.   V s >= m
//
// where row j of V is (w_k - w_j)^T over the final-layer weight columns and
// m_j is the worst-case margin over the reference latents. Solved through the
// dual  max_{lambda >= 0}  lambda^T m - 1/2 ||V^T lambda||^2  and certified
// by the KKT conditions (stationarity s = V^T lambda, primal/dual
// feasibility, complementary slackness, zero duality gap).

namespace tacdef::qp {

/// The last linear layer: logits = weights^T latent + bias.
/// weights is d_emb x C with column j the class-j weight vector.
struct FinalLayer {
  Matrix weights;
  Vector bias;

  std::size_t embedding_dim() const { return weights.rows(); }
  std::size_t num_classes() const { return weights.cols(); }
};

/// Reduced constraint system for one target class: C-1 rows, one per rival
/// class, in ascending class order skipping the target.
struct MarginSystem {
  std::size_t target_class = 0;
  Matrix v;        // (C-1) x d_emb, row r = (w_k - w_j)^T for j = class_order[r]
  Vector m;        // worst-case margins, length C-1
  std::vector<std::size_t> class_order;
};

struct DualSolution {
  Vector lambda;            // >= 0 componentwise, hard guarantee
  double objective = 0.0;   // lambda^T m - 1/2 ||V^T lambda||^2
  std::size_t iterations = 0;  // full sweeps performed
  bool converged = false;
  std::vector<std::size_t> frozen_rows;  // zero rows of V, pinned at lambda = 0
  Vector objective_trace;   // per-sweep objective, filled when cfg.track_objective
};

struct KktReport {
  double stationarity_resid = 0.0;  // ||s - V^T lambda||_inf
  double primal_violation = 0.0;    // max(0, max_j (m_j - (Vs)_j))
  double dual_violation = 0.0;      // max(0, -min_j lambda_j)
  double comp_slack_resid = 0.0;    // max_j |lambda_j ((Vs)_j - m_j)|
  double duality_gap = 0.0;         // primal objective - dual objective
};

/// Sufficient-condition report: guaranteed_feasible = false only means the
/// hypothesis (full row rank and C-1 < d_emb) failed, not that the system is
/// infeasible.
struct FeasibilityReport {
  std::size_t rank_of_v = 0;
  bool full_row_rank = false;
  bool dim_condition = false;  // C-1 < d_emb
  bool guaranteed_feasible = false;
};

struct SolverConfig {
  double tol = 1e-8;            // complementarity residual proxy threshold
  std::size_t max_sweeps = 0;   // 0 = auto: 100 * (C-1)^2
  double kkt_tol = 1e-6;        // certification threshold on all residuals
  double rank_tol = 1e-10;      // relative singular-value cutoff
  bool include_bias_in_margins = false;  // off: margins exactly as the reduced QP writes them
  bool track_objective = false;
};

/// Duplicate weight columns with an unmet margin: no finite perturbation can
/// separate the pair, so the per-class problem has no feasible point.
class InfeasibleSystem : public std::runtime_error {
 public:
  InfeasibleSystem(std::size_t row, std::size_t rival_class, double margin);
  std::size_t row() const { return row_; }
  std::size_t rival_class() const { return rival_class_; }

 private:
  std::size_t row_;
  std::size_t rival_class_;
};

struct PerturbationResult {
  std::size_t target_class = 0;
  Vector s;  // empty when infeasible
  DualSolution dual;
  KktReport kkt;
  FeasibilityReport feasibility;
  bool infeasible = false;
  bool certified = false;
  std::string note;
};

/// Row r = (w_k - w_j)^T, m_r = max_i -(w_k - w_j)^T x_i for j != k ascending.
/// With include_bias the constraint carries the (b_k - b_j) offset as well,
/// making the nonnegative-margin guarantee argmax-exact on biased layers.
MarginSystem build_margin_system(const Matrix& latents, const FinalLayer& layer,
                                 std::size_t target_class, bool include_bias = false);

FeasibilityReport check_feasibility(const MarginSystem& sys, std::size_t embedding_dim,
                                    double tol = 1e-10);

/// Projected cyclic coordinate ascent on the dual. Each pass maximizes the
/// concave objective exactly in one coordinate, lambda_j <- max(0, lambda_j +
/// (m_j - v_j^T u) / ||v_j||^2) with u = V^T lambda kept incrementally and
/// recomputed fresh once per sweep. Convergence is declared when
/// max_j |min(lambda_j, v_j^T u - m_j)| over non-frozen rows falls below
/// cfg.tol. Zero rows of V are frozen at lambda_j = 0 when m_j <= cfg.tol and
/// raise InfeasibleSystem otherwise.
DualSolution solve_dual(const MarginSystem& sys, const SolverConfig& cfg = {});

/// Stationarity: s = V^T lambda.
Vector recover_perturbation(const MarginSystem& sys, const DualSolution& dual);

KktReport verify_kkt(const MarginSystem& sys, const Vector& s, const DualSolution& dual);

/// All residuals within tol and the gap within tol * (1 + |dual objective|).
bool kkt_certified(const KktReport& kkt, double dual_objective, double tol = 1e-6);

/// One certified result per class. Infeasible classes carry a marker instead
/// of s and never abort the batch; the caller treats them as non-poisoned
/// candidates with infinite norm.
std::vector<PerturbationResult> perturbations_for_all_classes(const Matrix& latents,
                                                              const FinalLayer& layer,
                                                              const SolverConfig& cfg = {});

}  // namespace tacdef::qp

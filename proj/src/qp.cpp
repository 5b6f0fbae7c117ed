#include "tacdef/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tacdef::qp {

namespace {
constexpr double kZeroRowSq = 1e-14;  // ||v_j||^2 below this counts as a zero row
}

InfeasibleSystem::InfeasibleSystem(std::size_t row, std::size_t rival_class, double margin)
    : std::runtime_error("infeasible margin system: row " + std::to_string(row) +
                         " (rival class " + std::to_string(rival_class) +
                         ") has a zero weight-column difference but required margin " +
                         std::to_string(margin)),
      row_(row),
      rival_class_(rival_class) {}

MarginSystem build_margin_system(const Matrix& latents, const FinalLayer& layer,
                                 std::size_t target_class, bool include_bias) {
  const std::size_t c = layer.num_classes();
  const std::size_t d = layer.embedding_dim();
  if (c < 2) throw std::invalid_argument("build_margin_system: need at least 2 classes");
  if (target_class >= c) throw std::invalid_argument("build_margin_system: class index out of range");
  if (latents.rows() == 0) throw std::invalid_argument("build_margin_system: empty latent batch");
  if (latents.cols() != d)
    throw std::invalid_argument("build_margin_system: latent dimension mismatch");

  MarginSystem sys;
  sys.target_class = target_class;
  sys.v = Matrix(c - 1, d);
  sys.m = Vector(c - 1, 0.0);
  sys.class_order.reserve(c - 1);

  std::size_t r = 0;
  for (std::size_t j = 0; j < c; ++j) {
    if (j == target_class) continue;
    sys.class_order.push_back(j);
    for (std::size_t t = 0; t < d; ++t)
      sys.v(r, t) = layer.weights(t, target_class) - layer.weights(t, j);

    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < latents.rows(); ++i)
      worst = std::max(worst, -dot(sys.v.row(r), latents.row(i)));
    if (include_bias) worst -= layer.bias[target_class] - layer.bias[j];
    sys.m[r] = worst;
    ++r;
  }
  return sys;
}

FeasibilityReport check_feasibility(const MarginSystem& sys, std::size_t embedding_dim,
                                    double tol) {
  FeasibilityReport rep;
  rep.rank_of_v = row_rank(sys.v, tol);
  rep.full_row_rank = rep.rank_of_v == sys.v.rows();
  rep.dim_condition = sys.v.rows() < embedding_dim;
  rep.guaranteed_feasible = rep.full_row_rank && rep.dim_condition;
  return rep;
}

DualSolution solve_dual(const MarginSystem& sys, const SolverConfig& cfg) {
  const std::size_t rows = sys.v.rows();
  const std::size_t max_sweeps =
      cfg.max_sweeps > 0 ? cfg.max_sweeps : 100 * std::max<std::size_t>(rows * rows, 1);

  Vector row_sq(rows);
  std::vector<bool> frozen(rows, false);
  DualSolution sol;
  sol.lambda.assign(rows, 0.0);

  for (std::size_t j = 0; j < rows; ++j) {
    row_sq[j] = norm2_sq(sys.v.row(j));
    if (row_sq[j] < kZeroRowSq) {
      if (sys.m[j] > cfg.tol) throw InfeasibleSystem(j, sys.class_order[j], sys.m[j]);
      frozen[j] = true;
      sol.frozen_rows.push_back(j);
    }
  }

  Vector u(sys.v.cols(), 0.0);  // running V^T lambda
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    for (std::size_t j = 0; j < rows; ++j) {
      if (frozen[j]) continue;
      const double g = sys.m[j] - dot(sys.v.row(j), u);
      const double next = std::max(0.0, sol.lambda[j] + g / row_sq[j]);
      const double diff = next - sol.lambda[j];
      if (diff != 0.0) {
        const auto vj = sys.v.row(j);
        for (std::size_t t = 0; t < u.size(); ++t) u[t] += diff * vj[t];
        sol.lambda[j] = next;
      }
    }

    // Fresh recompute once per sweep bounds incremental drift; the residual,
    // objective and the recovered s all see the same accumulation.
    u = matvec_t(sys.v, sol.lambda);
    double resid = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      if (frozen[j]) continue;
      const double slack = dot(sys.v.row(j), u) - sys.m[j];
      resid = std::max(resid, std::abs(std::min(sol.lambda[j], slack)));
    }
    sol.objective = dot(sol.lambda, sys.m) - 0.5 * norm2_sq(u);
    sol.iterations = sweep + 1;
    if (cfg.track_objective) sol.objective_trace.push_back(sol.objective);
    if (resid <= cfg.tol) {
      sol.converged = true;
      break;
    }
  }
  return sol;
}

Vector recover_perturbation(const MarginSystem& sys, const DualSolution& dual) {
  if (dual.lambda.size() != sys.v.rows())
    throw std::invalid_argument("recover_perturbation: multiplier length mismatch");
  return matvec_t(sys.v, dual.lambda);
}

KktReport verify_kkt(const MarginSystem& sys, const Vector& s, const DualSolution& dual) {
  if (s.size() != sys.v.cols() || dual.lambda.size() != sys.v.rows())
    throw std::invalid_argument("verify_kkt: dimension mismatch");

  KktReport rep;
  const Vector vt_lambda = matvec_t(sys.v, dual.lambda);
  double stat = 0.0;
  for (std::size_t t = 0; t < s.size(); ++t)
    stat = std::max(stat, std::abs(s[t] - vt_lambda[t]));
  rep.stationarity_resid = stat;

  const Vector vs = matvec(sys.v, s);
  double viol = 0.0;
  double slack_resid = 0.0;
  for (std::size_t j = 0; j < vs.size(); ++j) {
    viol = std::max(viol, sys.m[j] - vs[j]);
    slack_resid = std::max(slack_resid, std::abs(dual.lambda[j] * (vs[j] - sys.m[j])));
  }
  rep.primal_violation = std::max(0.0, viol);
  rep.comp_slack_resid = slack_resid;

  double min_lambda = 0.0;
  for (double l : dual.lambda) min_lambda = std::min(min_lambda, l);
  rep.dual_violation = std::max(0.0, -min_lambda);

  const double primal_obj = 0.5 * norm2_sq(s);
  const double dual_obj = dot(dual.lambda, sys.m) - 0.5 * norm2_sq(vt_lambda);
  rep.duality_gap = primal_obj - dual_obj;
  return rep;
}

bool kkt_certified(const KktReport& kkt, double dual_objective, double tol) {
  return kkt.stationarity_resid <= tol && kkt.primal_violation <= tol &&
         kkt.dual_violation <= tol && kkt.comp_slack_resid <= tol &&
         std::abs(kkt.duality_gap) <= tol * (1.0 + std::abs(dual_objective));
}

std::vector<PerturbationResult> perturbations_for_all_classes(const Matrix& latents,
                                                              const FinalLayer& layer,
                                                              const SolverConfig& cfg) {
  std::vector<PerturbationResult> results;
  results.reserve(layer.num_classes());
  for (std::size_t k = 0; k < layer.num_classes(); ++k) {
    PerturbationResult res;
    res.target_class = k;
    const MarginSystem sys =
        build_margin_system(latents, layer, k, cfg.include_bias_in_margins);
    res.feasibility = check_feasibility(sys, layer.embedding_dim(), cfg.rank_tol);
    try {
      res.dual = solve_dual(sys, cfg);
      res.s = recover_perturbation(sys, res.dual);
      res.kkt = verify_kkt(sys, res.s, res.dual);
      res.certified =
          res.dual.converged && kkt_certified(res.kkt, res.dual.objective, cfg.kkt_tol);
    } catch (const InfeasibleSystem& e) {
      res.infeasible = true;
      res.note = e.what();
    }
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace tacdef::qp

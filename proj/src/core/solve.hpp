#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core/corrected.hpp"
#include "core/huber.hpp"

namespace opcorr {

struct SolveConfig {
  double lambda = 0.0;
  double delta = 0.01;   // pseudo-Huber scale
  double mu = 0.2;       // fixed step size
  int max_iters = 4000;
  bool positivity = true;
  int trace_every = 1;
};

struct TraceRow {
  int iter = 0;
  double data_term = 0.0;  // ||A x_n - y|| with the accurate operator
  double alignment = 0.0;  // data-term gradient cosine, NaN when undefined
  double rel_l2 = 0.0;     // to ground truth
  double fwd_err = 0.0;    // ||(A - A_theta)(x_n)|| / ||A x_n||
  double adj_err = 0.0;    // ||(A* - A*_phi)(A_theta(x_n) - y)|| / ||A*(A_theta(x_n)-y)||
  double lemma_lhs = 0.0;  // full-gradient alignment, eq (4.5) normalisation
  double lemma_rhs = 0.0;  // alignment lower bound
  double grad_norm = 0.0;  // ||grad L(x_n)|| with the accurate operator
  double fwd_gap = 0.0;    // ||A|| ||(A - A_theta)(x_n)||
  double adj_gap = 0.0;    // ||(A* - A*_phi)(A_theta(x_n) - y)||
};

// Optional extras recorded into the trace; all quantities needing the
// accurate operator are NaN when it is absent.
struct SolveInstruments {
  const LinearOp* accurate = nullptr;
  const Grid* ground_truth = nullptr;
  double accurate_norm = 0.0;  // ||A||, used by the lemma bound
};

struct SolveResult {
  Grid x;
  std::vector<TraceRow> trace;
  int descent_violations = 0;  // objective increases seen for method none
};

// Projected gradient descent x_{n+1} = P+[x_n - mu (grad_fid + lambda grad_R)]
// starting from x_0 = 4 Atilde* y (clipped when positivity is on).
SolveResult solve(const CorrectedOperator& co, const Grid& y, const SolveConfig& cfg,
                  const SolveInstruments& instr = {});

// normalized inner product of two gradients; nullopt when either is zero
std::optional<double> alignment(const Grid& g_accurate, const Grid& g_method);

struct LemmaBound {
  double lhs = 0.0;
  double rhs = 0.0;
  bool valid = false;  // false when the accurate gradient vanishes
};

// lhs = <grad L, grad^dagger L_theta> / ||grad L||^2 and the lower bound
// rhs = 1 - (||A|| ||(A - A_theta)x|| + ||(A* - A*_phi) r||) / ||grad L||,
// with full gradients including the regulariser.
LemmaBound lemma_bound_check(const CorrectedOperator& co, const Grid& x, const Grid& y,
                             const LinearOp& accurate, double accurate_norm,
                             double lambda, double delta);

// empirical strong convexity: min over random segment pairs of
// 2 [L(x') - L(x) - <grad L(x), x' - x>] / ||x' - x||^2
double strong_convexity_probe(const std::function<double(const Grid&)>& value,
                              const std::function<Grid(const Grid&)>& grad,
                              const std::function<Grid(uint64_t)>& draw,
                              int pairs, uint64_t seed);

struct ProximityReport {
  double distance = 0.0;   // ||xhat - xhat_perturbed||
  double sup_error = 0.0;  // sup over the probe ball of ||(A_p - A)x||
  double delta = 0.0;      // energy-gap bound 2 C s + s^2
  double m = 0.0;          // strong convexity constant of the Tikhonov problem
  double bound = 0.0;      // sqrt(2 delta / m)
  bool ok = false;         // distance <= bound
};

// Toy-case minimiser proximity with Tikhonov regularisation R = 1/2 ||x||^2:
// both problems are solved in closed form (dense) and cross-checked by
// gradient descent.
ProximityReport proximity_check_toy(const LinearOp& A, const LinearOp& A_pert,
                                    const Grid& y, double lambda);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);
void write_lemma_csv(const std::string& path, const std::vector<TraceRow>& trace);
std::vector<TraceRow> read_trace_csv(const std::string& path);
std::vector<TraceRow> read_lemma_csv(const std::string& path);

}  // namespace opcorr

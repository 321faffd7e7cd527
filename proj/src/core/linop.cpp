#include "core/linop.hpp"

#include <cmath>

#include "core/rng.hpp"

namespace opcorr {

Grid random_grid(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  Grid g(rows, cols);
  for (double& x : g.vec()) x = rng.normal();
  return g;
}

double op_dot_test(const LinearOp& op, int trials, uint64_t seed) {
  require(trials >= 1, ErrorKind::input, "op_dot_test: trials must be >= 1");
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Grid x = random_grid(op.domain.rows, op.domain.cols, derive_seed(seed, "dot.x", t));
    Grid y = random_grid(op.range.rows, op.range.cols, derive_seed(seed, "dot.y", t));
    Grid ax = op.apply(x);
    Grid aty = op.adjoint(y);
    double lhs = dot(ax, y);
    double rhs = dot(x, aty);
    double denom = norm2(ax) * norm2(y) + norm2(x) * norm2(aty);
    if (denom == 0.0) continue;
    worst = std::max(worst, std::fabs(lhs - rhs) / denom);
  }
  return worst;
}

Eigen::MatrixXd assemble_dense(const std::function<Grid(const Grid&)>& fn,
                               Shape in, Shape out) {
  Eigen::MatrixXd m(out.count(), in.count());
  for (size_t j = 0; j < in.count(); ++j) {
    Grid e(in.rows, in.cols);
    e.vec()[j] = 1.0;
    Grid col = fn(e);
    require(col.size() == out.count(), ErrorKind::input,
            "assemble_dense: unexpected output size");
    for (size_t i = 0; i < out.count(); ++i) m(i, j) = col.vec()[i];
  }
  return m;
}

double op_norm(const LinearOp& op, int iters, uint64_t seed) {
  Grid v = random_grid(op.domain.rows, op.domain.cols, seed);
  double lam = 0.0;
  for (int k = 0; k < iters; ++k) {
    double nv = norm2(v);
    require(nv > 0.0, ErrorKind::numeric, "op_norm: degenerate iterate");
    v = (1.0 / nv) * v;
    Grid w = op.adjoint(op.apply(v));
    lam = dot(v, w);  // Rayleigh quotient for op* op
    v = w;
  }
  return std::sqrt(std::max(0.0, lam));
}

}  // namespace opcorr

#include "core/solve.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <cstdlib>
#include <sstream>

#include "core/rng.hpp"

namespace opcorr {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::optional<double> alignment(const Grid& g_accurate, const Grid& g_method) {
  double na = norm2(g_accurate), nm = norm2(g_method);
  if (na == 0.0 || nm == 0.0) return std::nullopt;
  return dot(g_accurate, g_method) / (na * nm);
}

LemmaBound lemma_bound_check(const CorrectedOperator& co, const Grid& x, const Grid& y,
                             const LinearOp& accurate, double accurate_norm,
                             double lambda, double delta) {
  Grid ax = accurate.apply(x);
  Grid g_acc = accurate.adjoint(ax - y);
  Grid g_reg = huber_grad(x, delta);
  Grid grad_l = g_acc;
  axpy(grad_l, lambda, g_reg);
  double nl = norm2(grad_l);
  LemmaBound out;
  if (nl == 0.0) return out;

  Grid fwd = co.forward(x);
  Grid r = fwd - y;
  Grid g_fid = co.gradient_from_residual(x, y, r);
  Grid grad_theta = g_fid;
  axpy(grad_theta, lambda, g_reg);

  out.lhs = dot(grad_l, grad_theta) / (nl * nl);
  double fwd_gap = accurate_norm * norm2(ax - fwd);
  double adj_gap = norm2(accurate.adjoint(r) - g_fid);
  out.rhs = 1.0 - (fwd_gap + adj_gap) / nl;
  out.valid = true;
  return out;
}

SolveResult solve(const CorrectedOperator& co, const Grid& y, const SolveConfig& cfg,
                  const SolveInstruments& instr) {
  require(cfg.mu > 0.0 && cfg.delta > 0.0 && cfg.lambda >= 0.0, ErrorKind::config,
          "solve: need mu > 0, delta > 0, lambda >= 0");
  require(cfg.max_iters >= 0 && cfg.trace_every >= 1, ErrorKind::config,
          "solve: bad iteration budget");

  SolveResult res;
  Grid x = co.initial_point(y);
  if (cfg.positivity) clip_nonneg(x);

  double prev_objective = kNaN;  // monitored for method none only
  for (int n = 0;; ++n) {
    Grid fwd = co.forward(x);
    Grid r = fwd - y;
    Grid g_fid = co.gradient_from_residual(x, y, r);

    if (n % cfg.trace_every == 0 || n == cfg.max_iters) {
      TraceRow row;
      row.iter = n;
      row.data_term = kNaN;
      row.alignment = kNaN;
      row.rel_l2 = instr.ground_truth ? rel_l2(x, *instr.ground_truth) : kNaN;
      row.fwd_err = kNaN;
      row.adj_err = kNaN;
      row.lemma_lhs = kNaN;
      row.lemma_rhs = kNaN;
      row.grad_norm = kNaN;
      row.fwd_gap = kNaN;
      row.adj_gap = kNaN;
      if (instr.accurate) {
        Grid ax = instr.accurate->apply(x);
        Grid res_acc = ax - y;
        row.data_term = norm2(res_acc);
        Grid g_acc = instr.accurate->adjoint(res_acc);
        if (auto a = alignment(g_acc, g_fid)) row.alignment = *a;
        double nax = norm2(ax);
        if (nax > 0.0) row.fwd_err = norm2(ax - fwd) / nax;
        Grid astar_r = instr.accurate->adjoint(r);
        double nar = norm2(astar_r);
        if (nar > 0.0) row.adj_err = norm2(astar_r - g_fid) / nar;
        if (instr.accurate_norm > 0.0) {
          Grid g_reg = huber_grad(x, cfg.delta);
          Grid grad_l = g_acc;
          axpy(grad_l, cfg.lambda, g_reg);
          double nl = norm2(grad_l);
          row.grad_norm = nl;
          row.fwd_gap = instr.accurate_norm * norm2(ax - fwd);
          row.adj_gap = norm2(astar_r - g_fid);
          if (nl > 0.0) {
            Grid grad_theta = g_fid;
            axpy(grad_theta, cfg.lambda, g_reg);
            row.lemma_lhs = dot(grad_l, grad_theta) / (nl * nl);
            row.lemma_rhs = 1.0 - (row.fwd_gap + row.adj_gap) / nl;
          }
        }
      }
      res.trace.push_back(row);
    }
    if (n == cfg.max_iters) break;

    if (co.method == Method::none) {
      double obj = 0.5 * norm2(r) * norm2(r) + cfg.lambda * huber_value(x, cfg.delta);
      if (std::isfinite(prev_objective) && obj > prev_objective + 1e-10)
        ++res.descent_violations;
      prev_objective = obj;
    }

    Grid g_reg = huber_grad(x, cfg.delta);
    axpy(x, -cfg.mu, g_fid);
    axpy(x, -cfg.mu * cfg.lambda, g_reg);
    if (cfg.positivity) clip_nonneg(x);
    if (!all_finite(x))
      fail(ErrorKind::numeric, "solve: non-finite iterate at iteration " +
                                   std::to_string(n + 1));
  }
  res.x = std::move(x);
  return res;
}

double strong_convexity_probe(const std::function<double(const Grid&)>& value,
                              const std::function<Grid(const Grid&)>& grad,
                              const std::function<Grid(uint64_t)>& draw,
                              int pairs, uint64_t seed) {
  double m_hat = HUGE_VAL;
  for (int i = 0; i < pairs; ++i) {
    Grid x = draw(derive_seed(seed, "probe.a", i));
    Grid xp = draw(derive_seed(seed, "probe.b", i));
    Grid d = xp - x;
    double dd = norm2(d);
    if (dd == 0.0) continue;
    double gap = value(xp) - value(x) - dot(grad(x), d);
    m_hat = std::min(m_hat, 2.0 * gap / (dd * dd));
  }
  return std::max(0.0, m_hat == HUGE_VAL ? 0.0 : m_hat);
}

ProximityReport proximity_check_toy(const LinearOp& A, const LinearOp& A_pert,
                                    const Grid& y, double lambda) {
  require(lambda > 0.0, ErrorKind::config, "proximity check needs lambda > 0");
  require(A.domain == A_pert.domain && A.range == A_pert.range, ErrorKind::input,
          "proximity check: operator shapes differ");
  const Eigen::Index n = static_cast<Eigen::Index>(A.domain.count());

  Eigen::MatrixXd Am = assemble_dense(A.apply, A.domain, A.range);
  Eigen::MatrixXd Pm = assemble_dense(A_pert.apply, A.domain, A.range);
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), y.size());

  auto minimiser = [&](const Eigen::MatrixXd& M) -> Eigen::VectorXd {
    Eigen::MatrixXd H = M.transpose() * M + lambda * Eigen::MatrixXd::Identity(n, n);
    return H.ldlt().solve(M.transpose() * yv);
  };
  Eigen::VectorXd xa = minimiser(Am);
  Eigen::VectorXd xp = minimiser(Pm);

  // gradient-descent cross-check of the closed-form minimiser
  {
    Eigen::MatrixXd H = Am.transpose() * Am;
    double lmax = H.operatorNorm() + lambda;
    double mu = 1.0 / lmax;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < 20000; ++k) {
      Eigen::VectorXd g = Am.transpose() * (Am * x - yv) + lambda * x;
      x -= mu * g;
      if (g.norm() < 1e-13) break;
    }
    require((x - xa).norm() <= 1e-6 * (1.0 + xa.norm()), ErrorKind::numeric,
            "proximity check: gradient descent disagrees with the closed form");
  }

  ProximityReport rep;
  rep.distance = (xa - xp).norm();

  // probe ball large enough to contain both minimisers
  double rho = 2.0 * std::max(xa.norm(), xp.norm()) + 1.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Pm - Am);
  rep.sup_error = rho * svd.singularValues()(0);
  double c_bound = rho * Am.operatorNorm() + yv.norm();
  rep.delta = 2.0 * c_bound * rep.sup_error + rep.sup_error * rep.sup_error;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Am.transpose() * Am);
  rep.m = eig.eigenvalues().minCoeff() + lambda;
  rep.bound = std::sqrt(2.0 * rep.delta / rep.m);
  rep.ok = rep.distance <= rep.bound;
  return rep;
}

namespace {

// strtod-based field scan; istream number parsing rejects "nan"
std::vector<double> parse_csv_row(const std::string& line, size_t expect,
                                  const std::string& path) {
  std::vector<double> vals;
  const char* p = line.c_str();
  char* end = nullptr;
  while (*p) {
    double v = std::strtod(p, &end);
    require(end != p, ErrorKind::io, "bad trace row in " + path);
    vals.push_back(v);
    p = end;
    if (*p == ',') ++p;
  }
  require(vals.size() == expect, ErrorKind::io, "bad trace row in " + path);
  return vals;
}

}  // namespace

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::io, "cannot write trace " + path);
  out << "iter,data_term,alignment,rel_l2,fwd_err,adj_err\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.iter,
                  r.data_term, r.alignment, r.rel_l2, r.fwd_err, r.adj_err);
    out << buf;
  }
}

void write_lemma_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::io, "cannot write lemma trace " + path);
  out << "iter,lemma_lhs,lemma_rhs,grad_norm,fwd_gap,adj_gap\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.iter,
                  r.lemma_lhs, r.lemma_rhs, r.grad_norm, r.fwd_gap, r.adj_gap);
    out << buf;
  }
}

std::vector<TraceRow> read_lemma_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot read lemma trace " + path);
  std::string line;
  std::getline(in, line);
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto v = parse_csv_row(line, 6, path);
    TraceRow r;
    r.iter = static_cast<int>(v[0]);
    r.lemma_lhs = v[1];
    r.lemma_rhs = v[2];
    r.grad_norm = v[3];
    r.fwd_gap = v[4];
    r.adj_gap = v[5];
    rows.push_back(r);
  }
  return rows;
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot read trace " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto v = parse_csv_row(line, 6, path);
    TraceRow r;
    r.iter = static_cast<int>(v[0]);
    r.data_term = v[1];
    r.alignment = v[2];
    r.rel_l2 = v[3];
    r.fwd_err = v[4];
    r.adj_err = v[5];
    rows.push_back(r);
  }
  return rows;
}

}  // namespace opcorr

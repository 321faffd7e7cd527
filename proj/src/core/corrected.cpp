#include "core/corrected.hpp"

namespace opcorr {

std::string to_string(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::aem: return "aem";
    case Method::forward_only: return "forward";
    case Method::forward_adjoint: return "forward_adjoint";
  }
  return "?";
}

Grid CorrectedOperator::forward(const Grid& x) const {
  Grid ax = Atilde.apply(x);
  if (method == Method::forward_only || method == Method::forward_adjoint)
    return F->apply(ax);
  return ax;
}

Grid CorrectedOperator::fidelity_gradient(const Grid& x, const Grid& y) const {
  if (method == Method::aem) return aem_gradient(x, y, Atilde, *stats);
  Grid r = forward(x) - y;
  return gradient_from_residual(x, y, r);
}

Grid CorrectedOperator::gradient_from_residual(const Grid& x, const Grid& y,
                                               const Grid& r) const {
  switch (method) {
    case Method::none:
      return Atilde.adjoint(r);
    case Method::aem:
      return aem_gradient(x, y, Atilde, *stats);
    case Method::forward_only: {
      // Atilde* [D F(Atilde x)]* r
      Grid u = Atilde.apply(x);
      return Atilde.adjoint(F->input_vjp(u, r));
    }
    case Method::forward_adjoint:
      return G->apply(Atilde.adjoint(r));
  }
  fail(ErrorKind::internal, "unknown method");
}

Grid CorrectedOperator::initial_point(const Grid& y) const {
  return 4.0 * Atilde.adjoint(y);
}

CorrectedOperator make_uncorrected(const LinearOp& Atilde) {
  CorrectedOperator co;
  co.method = Method::none;
  co.Atilde = Atilde;
  return co;
}

CorrectedOperator make_aem(const LinearOp& Atilde, std::shared_ptr<ErrorStats> stats) {
  CorrectedOperator co;
  co.method = Method::aem;
  co.Atilde = Atilde;
  co.stats = std::move(stats);
  return co;
}

CorrectedOperator make_forward_only(const LinearOp& Atilde, std::shared_ptr<UNet> F) {
  CorrectedOperator co;
  co.method = Method::forward_only;
  co.Atilde = Atilde;
  co.F = std::move(F);
  return co;
}

CorrectedOperator make_forward_adjoint(const LinearOp& Atilde, std::shared_ptr<UNet> F,
                                       std::shared_ptr<UNet> G) {
  CorrectedOperator co;
  co.method = Method::forward_adjoint;
  co.Atilde = Atilde;
  co.F = std::move(F);
  co.G = std::move(G);
  return co;
}

}  // namespace opcorr

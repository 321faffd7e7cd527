#pragma once

#include <memory>

#include "core/aem.hpp"
#include "core/unet.hpp"

namespace opcorr {

enum class Method { none, aem, forward_only, forward_adjoint };

std::string to_string(Method m);

// A_theta(x) = F(Atilde x) together with the method-specific gradient
// surrogate for the data term:
//   none:            Atilde* (Atilde x - y)
//   aem:             Atilde* L^T L (Atilde x - y + eta)
//   forward_only:    Atilde* [D F(Atilde x)]* (F(Atilde x) - y)
//   forward_adjoint: G( Atilde* (F(Atilde x) - y) )
// For aem/none the forward map is the uncorrected Atilde x.
struct CorrectedOperator {
  Method method = Method::none;
  LinearOp Atilde;
  std::shared_ptr<UNet> F;          // learned methods
  std::shared_ptr<UNet> G;          // forward_adjoint only
  std::shared_ptr<ErrorStats> stats;  // aem only

  Grid forward(const Grid& x) const;
  Grid fidelity_gradient(const Grid& x, const Grid& y) const;
  // gradient surrogate given a precomputed corrected residual r = forward(x)-y
  // (aem ignores r and recomputes from x); lets the solver evaluate forward
  // and gradient with one network pass each
  Grid gradient_from_residual(const Grid& x, const Grid& y, const Grid& r) const;
  // 4 * Atilde* y, the solver's starting point
  Grid initial_point(const Grid& y) const;
};

CorrectedOperator make_uncorrected(const LinearOp& Atilde);
CorrectedOperator make_aem(const LinearOp& Atilde, std::shared_ptr<ErrorStats> stats);
CorrectedOperator make_forward_only(const LinearOp& Atilde, std::shared_ptr<UNet> F);
CorrectedOperator make_forward_adjoint(const LinearOp& Atilde, std::shared_ptr<UNet> F,
                                       std::shared_ptr<UNet> G);

}  // namespace opcorr

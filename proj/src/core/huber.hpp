#pragma once

#include "core/grid.hpp"

namespace opcorr {

// Pseudo-Huber variation functional
//   R(x) = sum_{i,j} delta [ sqrt(1 + ((x[i+1,j]-x[i,j])^2
//                                    + (x[i,j+1]-x[i,j])^2)/delta^2) - 1 ]
// with replicate (zero-flux) boundary handling: differences across the last
// row/column are zero.
double huber_value(const Grid& x, double delta);

// Exact gradient of huber_value, assembled from the forward-difference
// stencil and its adjoint.
Grid huber_grad(const Grid& x, double delta);

}  // namespace opcorr

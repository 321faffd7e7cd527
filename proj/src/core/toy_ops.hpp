#pragma once

#include "core/linop.hpp"

namespace opcorr {

// Downsampling pair on vectors (stored as 1 x n grids): A averages with a
// (1/4, 1/2, 1/4) stencil (first row (1/2, 1/4)), Atilde keeps every second
// entry starting at index 0. Both map R^n -> R^(n/2); adjoints are the exact
// transposes.
struct ToyOps {
  int n = 0;
  LinearOp A;
  LinearOp Atilde;
};

ToyOps make_toy_ops(int n);

}  // namespace opcorr

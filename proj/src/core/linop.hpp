#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "core/grid.hpp"

namespace opcorr {

struct Shape {
  int rows = 0, cols = 0;
  bool operator==(const Shape&) const = default;
  size_t count() const { return static_cast<size_t>(rows) * cols; }
};

// A linear map with an explicit adjoint. Both directions are plain functions
// of immutable inputs; implementations that cache FFT plans guard them
// internally.
struct LinearOp {
  std::string label;
  Shape domain;
  Shape range;
  std::function<Grid(const Grid&)> apply;
  std::function<Grid(const Grid&)> adjoint;

  Grid operator()(const Grid& x) const { return apply(x); }
};

// Max over `trials` random pairs (x, y) of
//   |<Ax, y> - <x, A*y>| / (||Ax|| ||y|| + ||x|| ||A*y||).
double op_dot_test(const LinearOp& op, int trials, uint64_t seed);

// Apply to every unit vector; column j of the result is op(e_j) flattened.
Eigen::MatrixXd assemble_dense(const std::function<Grid(const Grid&)>& fn,
                               Shape in, Shape out);

// ||op|| estimated by power iteration on op* op.
double op_norm(const LinearOp& op, int iters = 50, uint64_t seed = 7);

Grid random_grid(int rows, int cols, uint64_t seed);

}  // namespace opcorr

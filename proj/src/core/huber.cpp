#include "core/huber.hpp"

#include <cmath>

namespace opcorr {

double huber_value(const Grid& x, double delta) {
  require(delta > 0.0, ErrorKind::input, "huber: delta must be positive");
  const int R = x.rows(), C = x.cols();
  double sum = 0.0;
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) {
      double dv = (i + 1 < R) ? x(i + 1, j) - x(i, j) : 0.0;
      double dh = (j + 1 < C) ? x(i, j + 1) - x(i, j) : 0.0;
      sum += delta * (std::sqrt(1.0 + (dv * dv + dh * dh) / (delta * delta)) - 1.0);
    }
  return sum;
}

Grid huber_grad(const Grid& x, double delta) {
  require(delta > 0.0, ErrorKind::input, "huber: delta must be positive");
  const int R = x.rows(), C = x.cols();
  Grid g(R, C);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) {
      double dv = (i + 1 < R) ? x(i + 1, j) - x(i, j) : 0.0;
      double dh = (j + 1 < C) ? x(i, j + 1) - x(i, j) : 0.0;
      double s = 1.0 / (delta * std::sqrt(1.0 + (dv * dv + dh * dh) / (delta * delta)));
      g(i, j) -= (dv + dh) * s;
      if (i + 1 < R) g(i + 1, j) += dv * s;
      if (j + 1 < C) g(i, j + 1) += dh * s;
    }
  return g;
}

}  // namespace opcorr

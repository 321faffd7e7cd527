#include "core/toy_ops.hpp"

namespace opcorr {

ToyOps make_toy_ops(int n) {
  require(n >= 4 && n % 2 == 0, ErrorKind::config,
          "make_toy_ops: n must be even and >= 4");
  int m = n / 2;
  Shape dom{1, n}, rng{1, m};

  auto a_apply = [n, m](const Grid& x) {
    require(x.rows() == 1 && x.cols() == n, ErrorKind::input, "toy A: bad shape");
    Grid y(1, m);
    y(0, 0) = 0.5 * x(0, 0) + 0.25 * x(0, 1);
    for (int i = 1; i < m; ++i)
      y(0, i) = 0.25 * x(0, 2 * i - 1) + 0.5 * x(0, 2 * i) + 0.25 * x(0, 2 * i + 1);
    return y;
  };
  auto a_adjoint = [n, m](const Grid& y) {
    require(y.rows() == 1 && y.cols() == m, ErrorKind::input, "toy A*: bad shape");
    Grid x(1, n);
    x(0, 0) += 0.5 * y(0, 0);
    x(0, 1) += 0.25 * y(0, 0);
    for (int i = 1; i < m; ++i) {
      x(0, 2 * i - 1) += 0.25 * y(0, i);
      x(0, 2 * i) += 0.5 * y(0, i);
      x(0, 2 * i + 1) += 0.25 * y(0, i);
    }
    return x;
  };

  auto t_apply = [n, m](const Grid& x) {
    require(x.rows() == 1 && x.cols() == n, ErrorKind::input, "toy Atilde: bad shape");
    Grid y(1, m);
    for (int i = 0; i < m; ++i) y(0, i) = x(0, 2 * i);
    return y;
  };
  auto t_adjoint = [n, m](const Grid& y) {
    require(y.rows() == 1 && y.cols() == m, ErrorKind::input, "toy Atilde*: bad shape");
    Grid x(1, n);
    for (int i = 0; i < m; ++i) x(0, 2 * i) = y(0, i);
    return x;
  };

  ToyOps ops;
  ops.n = n;
  ops.A = LinearOp{"toy_accurate", dom, rng, a_apply, a_adjoint};
  ops.Atilde = LinearOp{"toy_approx", dom, rng, t_apply, t_adjoint};
  return ops;
}

}  // namespace opcorr

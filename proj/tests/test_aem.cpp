#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "core/aem.hpp"
#include "core/rng.hpp"
#include "core/toy_ops.hpp"

using namespace opcorr;
namespace fs = std::filesystem;

namespace {

LinearOp dense_op(const Eigen::MatrixXd& m) {
  Shape dom{1, static_cast<int>(m.cols())}, rng{1, static_cast<int>(m.rows())};
  return LinearOp{
      "dense", dom, rng,
      [m](const Grid& x) {
        Eigen::Map<const Eigen::VectorXd> v(x.data(), x.size());
        return unflatten(m * v, 1, static_cast<int>(m.rows()));
      },
      [m](const Grid& y) {
        Eigen::Map<const Eigen::VectorXd> v(y.data(), y.size());
        return unflatten(m.transpose() * v, 1, static_cast<int>(m.cols()));
      }};
}

}  // namespace

TEST_SUITE("error_stats") {
  TEST_CASE("identical operators give zero statistics") {
    ToyOps toy = make_toy_ops(8);
    std::vector<Grid> samples;
    for (int i = 0; i < 5; ++i) samples.push_back(random_grid(1, 8, 100 + i));
    Eigen::VectorXd eta;
    Eigen::MatrixXd gamma;
    estimate_error_stats(samples, toy.A, toy.A, eta, gamma);
    CHECK(eta.cwiseAbs().maxCoeff() == 0.0);
    CHECK(gamma.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("two-sample hand example") {
    // operators engineered so eps^1 = (1, 0), eps^2 = (-1, 0)
    Eigen::MatrixXd a(2, 2), t(2, 2);
    a << 1, 0, 0, 0;
    t << 0, 0, 0, 0;
    LinearOp A = dense_op(a), T = dense_op(t);
    Grid s1(1, 2), s2(1, 2);
    s1(0, 0) = 1.0;
    s2(0, 0) = -1.0;
    Eigen::VectorXd eta;
    Eigen::MatrixXd gamma;
    estimate_error_stats({s1, s2}, A, T, eta, gamma);
    CHECK(eta(0) == 0.0);
    CHECK(eta(1) == 0.0);
    CHECK(gamma(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(gamma(0, 1) == 0.0);
    CHECK(gamma(1, 0) == 0.0);
    CHECK(gamma(1, 1) == 0.0);
  }

  TEST_CASE("a single sample is rejected") {
    ToyOps toy = make_toy_ops(8);
    Eigen::VectorXd eta;
    Eigen::MatrixXd gamma;
    std::vector<Grid> one = {random_grid(1, 8, 1)};
    CHECK_THROWS_AS(estimate_error_stats(one, toy.A, toy.Atilde, eta, gamma), Error);
  }

  TEST_CASE("mean estimate tightens with sample count") {
    // errors drawn from a known Gaussian; eta error decreases over N
    const int d = 4;
    Eigen::VectorXd true_eta(d);
    true_eta << 0.5, -0.2, 0.1, 0.9;
    auto estimate_err = [&](int n) {
      Rng rng(derive_seed(77, "aem.conv", n));
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) sum(k) += true_eta(k) + rng.normal();
      return (sum / n - true_eta).norm();
    };
    double e10 = estimate_err(10), e100 = estimate_err(100), e1000 = estimate_err(1000);
    CHECK(e100 < e10);
    CHECK(e1000 < e100);
  }
}

TEST_SUITE("whitening") {
  TEST_CASE("identity covariance gives identity whitening") {
    Eigen::MatrixXd gamma = Eigen::MatrixXd::Identity(3, 3);
    ErrorStats stats = whiten(Eigen::VectorXd::Zero(3), gamma, 0.0);
    Eigen::MatrixXd L = whitening_matrix(stats);
    CHECK((L - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-14);
  }

  TEST_CASE("diagonal covariance gives inverse square roots") {
    Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(2, 2);
    gamma(0, 0) = 4.0;
    gamma(1, 1) = 1.0;
    ErrorStats stats = whiten(Eigen::VectorXd::Zero(2), gamma, 0.0);
    Eigen::MatrixXd L = whitening_matrix(stats);
    CHECK(L(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(L(1, 1) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::fabs(L(0, 1)) + std::fabs(L(1, 0)) <= 1e-14);
  }

  TEST_CASE("zero covariance with floor jitter") {
    // L^T L = (1e-12 I)^{-1} requires L = 1e6 I
    Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(2, 2);
    ErrorStats stats = whiten(Eigen::VectorXd::Zero(2), gamma, 1e-12);
    Eigen::MatrixXd L = whitening_matrix(stats);
    CHECK(L(0, 0) == doctest::Approx(1e6).epsilon(1e-10));
  }

  TEST_CASE("round trip: L^T L (gamma + jitter I) is the identity") {
    Rng rng(31);
    const int d = 12;
    Eigen::MatrixXd base(d, d);
    for (int i = 0; i < d * d; ++i) base.data()[i] = rng.normal();
    Eigen::MatrixXd gamma = base * base.transpose() / d;
    ErrorStats stats = whiten(Eigen::VectorXd::Zero(d), gamma);
    Eigen::MatrixXd L = whitening_matrix(stats);
    Eigen::MatrixXd reg = gamma;
    reg.diagonal().array() += stats.jitter;
    double err = (L.transpose() * L * reg - Eigen::MatrixXd::Identity(d, d)).norm() /
                 std::sqrt(static_cast<double>(d));
    CHECK(err <= 1e-6);
  }

  TEST_CASE("asymmetric input is rejected") {
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS(whiten(Eigen::VectorXd::Zero(2), bad), Error);
  }
}

TEST_SUITE("aem_gradient") {
  TEST_CASE("zero residual gives zero gradient") {
    ToyOps toy = make_toy_ops(8);
    Eigen::MatrixXd gamma = Eigen::MatrixXd::Identity(4, 4);
    Eigen::VectorXd eta(4);
    eta << 0.1, -0.2, 0.3, 0.0;
    ErrorStats stats = whiten(eta, gamma, 0.0);
    Grid x = random_grid(1, 8, 4);
    Grid y = toy.Atilde.apply(x) + unflatten(eta, 1, 4);  // Atilde x - y + eta = 0
    Grid g = aem_gradient(x, y, toy.Atilde, stats);
    CHECK(norm2(g) <= 1e-12);
  }

  TEST_CASE("identity whitening and zero mean reduce to least squares") {
    ToyOps toy = make_toy_ops(8);
    ErrorStats stats = whiten(Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4), 0.0);
    Grid x = random_grid(1, 8, 5);
    Grid y = random_grid(1, 4, 6);
    Grid g = aem_gradient(x, y, toy.Atilde, stats);
    Grid expected = toy.Atilde.adjoint(toy.Atilde.apply(x) - y);
    CHECK(norm2(g - expected) <= 1e-12 * (1.0 + norm2(expected)));
  }

  TEST_CASE("gradient matches finite differences of the objective") {
    ToyOps toy = make_toy_ops(8);
    Rng rng(88);
    Eigen::MatrixXd base(4, 4);
    for (int i = 0; i < 16; ++i) base.data()[i] = rng.normal();
    Eigen::MatrixXd gamma = base * base.transpose() / 4 + Eigen::MatrixXd::Identity(4, 4);
    Eigen::VectorXd eta(4);
    for (int i = 0; i < 4; ++i) eta(i) = rng.normal();
    ErrorStats stats = whiten(eta, gamma, 0.0);

    for (int trial = 0; trial < 50; ++trial) {
      Grid x = random_grid(1, 8, 900 + trial);
      Grid y = random_grid(1, 4, 500 + trial);
      Grid dir = random_grid(1, 8, 700 + trial);
      Grid g = aem_gradient(x, y, toy.Atilde, stats);
      const double h = 1e-6;
      Grid xp = x, xm = x;
      axpy(xp, h, dir);
      axpy(xm, -h, dir);
      double fd = (aem_data_term(xp, y, toy.Atilde, stats) -
                   aem_data_term(xm, y, toy.Atilde, stats)) /
                  (2.0 * h);
      double an = dot(g, dir);
      CHECK(std::fabs(fd - an) <= 1e-6 * std::max(1.0, std::fabs(an)));
    }
  }

  TEST_CASE("enhanced error model merges an extra noise diagonal") {
    Eigen::MatrixXd gamma = Eigen::MatrixXd::Identity(2, 2);
    ErrorStats stats = whiten(Eigen::VectorXd::Zero(2), gamma, 0.0, 3.0);
    Eigen::MatrixXd L = whitening_matrix(stats);
    CHECK(L(0, 0) == doctest::Approx(0.5).epsilon(1e-12));  // (1 + 3)^{-1/2}
  }
}

TEST_SUITE("stats_io") {
  TEST_CASE("save and load round trip") {
    fs::path tmp = fs::temp_directory_path() / "opcorr_stats_test";
    fs::create_directories(tmp);
    Rng rng(3);
    Eigen::MatrixXd base(6, 6);
    for (int i = 0; i < 36; ++i) base.data()[i] = rng.normal();
    Eigen::MatrixXd gamma = base * base.transpose();
    Eigen::VectorXd eta(6);
    for (int i = 0; i < 6; ++i) eta(i) = rng.normal();
    ErrorStats stats = whiten(eta, gamma);
    stats.data_shape = {2, 3};
    save_error_stats((tmp / "s.stats").string(), stats);
    ErrorStats back = load_error_stats((tmp / "s.stats").string());
    CHECK((back.eta - eta).norm() == 0.0);
    CHECK((back.gamma - gamma).norm() == 0.0);
    CHECK(back.jitter == stats.jitter);
    CHECK(back.data_shape.rows == 2);
    CHECK(back.data_shape.cols == 3);
    fs::remove_all(tmp);
  }
}

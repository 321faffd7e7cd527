#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "core/rng.hpp"
#include "core/toy_ops.hpp"
#include "core/unet.hpp"

using namespace opcorr;
using ad::NodePtr;
using ad::Tensor;

namespace {

Tensor random_tensor(int c, int h, int w, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(c, h, w);
  for (size_t i = 0; i < t.size(); ++i) t.ptr()[i] = scale * rng.normal();
  return t;
}

double tdot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a.ptr()[i] * b.ptr()[i];
  return s;
}

}  // namespace

TEST_SUITE("autodiff_primitives") {
  TEST_CASE("conv adjoint identity: <conv(x,w), g> = <x, conv_data_bwd(g,w)>") {
    Tensor x = random_tensor(3, 6, 6, 1);
    Tensor w = random_tensor(2 * 3, 5, 5, 2);
    Tensor g = random_tensor(2, 6, 6, 3);
    NodePtr cx = ad::constant(x), cw = ad::constant(w), cg = ad::constant(g);
    double lhs = tdot(ad::conv2d(cx, cw)->value, g);
    double rhs = tdot(x, ad::conv2d_data_bwd(cg, cw, 3)->value);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    // and the weight pairing <conv(x,w), g> = <w, conv_weight_bwd(x,g)>
    double wts = tdot(w, ad::conv2d_weight_bwd(cx, cg, 5, 5)->value);
    CHECK(lhs == doctest::Approx(wts).epsilon(1e-12));
  }

  TEST_CASE("tconv adjoint identities") {
    Tensor x = random_tensor(3, 4, 4, 4);
    Tensor w = random_tensor(3 * 2, 2, 2, 5);
    Tensor g = random_tensor(2, 8, 8, 6);
    NodePtr cx = ad::constant(x), cw = ad::constant(w), cg = ad::constant(g);
    double lhs = tdot(ad::tconv2(cx, cw, 2)->value, g);
    double rhs = tdot(x, ad::tconv2_data_bwd(cg, cw, 3)->value);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    double wts = tdot(w, ad::tconv2_weight_bwd(cx, cg)->value);
    CHECK(lhs == doctest::Approx(wts).epsilon(1e-12));
  }

  TEST_CASE("pooling pair is mutually adjoint") {
    Tensor x = random_tensor(2, 6, 6, 7);
    Tensor g = random_tensor(2, 3, 3, 8);
    double lhs = tdot(ad::pool_avg2(ad::constant(x))->value, g);
    double rhs = tdot(x, ad::unpool_avg2(ad::constant(g))->value);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  TEST_CASE("single linear conv equals its dense assembly at 8x8") {
    Tensor w = random_tensor(1, 5, 5, 9);
    LinearOp conv_op{
        "conv", {8, 8}, {8, 8},
        [w](const Grid& x) {
          return ad::grid_from_tensor(
              ad::conv2d(ad::constant(ad::tensor_from_grid(x)), ad::constant(w))->value);
        },
        [w](const Grid& g) {
          return ad::grid_from_tensor(
              ad::conv2d_data_bwd(ad::constant(ad::tensor_from_grid(g)), ad::constant(w), 1)
                  ->value);
        }};
    Eigen::MatrixXd fwd = assemble_dense(conv_op.apply, {8, 8}, {8, 8});
    Eigen::MatrixXd adj = assemble_dense(conv_op.adjoint, {8, 8}, {8, 8});
    CHECK((fwd - adj.transpose()).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(op_dot_test(conv_op, 25, 11) <= 1e-13);
  }

  TEST_CASE("silu derivative orders agree with finite differences") {
    for (int k = 0; k < 3; ++k) {
      Tensor z = random_tensor(1, 1, 8, 20 + k);
      const double h = 1e-6;
      for (int i = 0; i < 8; ++i) {
        Tensor zp = z, zm = z;
        zp.data = std::make_shared<std::vector<double>>(*z.data);
        zm.data = std::make_shared<std::vector<double>>(*z.data);
        zp.ptr()[i] += h;
        zm.ptr()[i] -= h;
        double fd = (ad::silu(ad::constant(zp), k)->value.ptr()[i] -
                     ad::silu(ad::constant(zm), k)->value.ptr()[i]) /
                    (2 * h);
        double an = ad::silu(ad::constant(z), k + 1)->value.ptr()[i];
        CHECK(std::fabs(fd - an) <= 1e-7 * std::max(1.0, std::fabs(an)));
      }
    }
  }

  TEST_CASE("zero cotangent gives zero gradients") {
    UNet net(ArchConfig{2, 4, 3, true}, 5);
    Grid u = random_grid(8, 8, 31);
    Grid zero(8, 8);
    auto [ig, pg] = net.vjp(u, zero);
    CHECK(norm2(ig) == 0.0);
    double s = 0.0;
    for (double v : pg) s += std::fabs(v);
    CHECK(s == 0.0);
  }
}

TEST_SUITE("unet") {
  TEST_CASE("residual net with zero-initialised output conv is the identity") {
    UNet net(ArchConfig{3, 8, 5, true}, 42);
    Grid u = random_grid(16, 16, 12);
    Grid out = net.apply(u);
    CHECK(norm2(out - u) == 0.0);
  }

  TEST_CASE("non-residual net with zero-initialised output conv returns zero") {
    UNet net(ArchConfig{2, 4, 5, false}, 42);
    Grid u = random_grid(8, 8, 13);
    CHECK(norm2(net.apply(u)) == 0.0);
  }

  TEST_CASE("evaluation is deterministic") {
    UNet net(ArchConfig{2, 4, 5, true}, 7);
    auto flat = net.flat_params();
    Rng rng(91);
    for (double& v : flat) v += 0.1 * rng.normal();
    net.set_flat_params(flat);
    Grid u = random_grid(8, 8, 14);
    Grid a = net.apply(u);
    Grid b = net.apply(u);
    CHECK(a.vec() == b.vec());
  }

  TEST_CASE("input VJP matches central finite differences") {
    UNet net(ArchConfig{2, 4, 5, true}, 3);
    auto flat = net.flat_params();
    Rng rng(17);
    for (double& v : flat) v += 0.2 * rng.normal();
    net.set_flat_params(flat);

    const int n = 8;
    int failures = 0;
    for (int trial = 0; trial < 20; ++trial) {
      Grid u = random_grid(n, n, 100 + trial);
      Grid cot = random_grid(n, n, 200 + trial);
      Grid dir = random_grid(n, n, 300 + trial);
      auto [ig, pg] = net.vjp(u, cot);
      const double h = 1e-5;
      Grid up = u, um = u;
      axpy(up, h, dir);
      axpy(um, -h, dir);
      double fd = (dot(net.apply(up), cot) - dot(net.apply(um), cot)) / (2 * h);
      double an = dot(ig, dir);
      if (std::fabs(fd - an) > 1e-4 * std::max(1.0, std::fabs(an))) ++failures;
    }
    CHECK(failures == 0);
  }

  TEST_CASE("parameter VJP matches central finite differences") {
    UNet net(ArchConfig{2, 4, 5, true}, 4);
    auto flat = net.flat_params();
    Rng rng(18);
    for (double& v : flat) v += 0.2 * rng.normal();
    net.set_flat_params(flat);

    const int n = 8;
    Grid u = random_grid(n, n, 400);
    Grid cot = random_grid(n, n, 401);
    auto [ig, pg] = net.vjp(u, cot);

    int failures = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> dir(flat.size());
      Rng drng(derive_seed(5, "pdir", trial));
      for (double& v : dir) v = drng.normal();
      const double h = 1e-5;
      auto perturbed = [&](double sign) {
        std::vector<double> p = net.flat_params();
        for (size_t i = 0; i < p.size(); ++i) p[i] += sign * h * dir[i];
        UNet tmp = net;
        tmp.set_flat_params(p);
        return dot(tmp.apply(u), cot);
      };
      double fd = (perturbed(1.0) - perturbed(-1.0)) / (2 * h);
      double an = 0.0;
      for (size_t i = 0; i < pg.size(); ++i) an += pg[i] * dir[i];
      if (std::fabs(fd - an) > 1e-4 * std::max(1.0, std::fabs(an))) ++failures;
    }
    CHECK(failures == 0);
  }

  TEST_CASE("double backward: gradient of the adjoint penalty matches FD") {
    // loss(theta) = || (A* - Atilde* [DF(u)]*) (F(u) - y) ||^2 for the toy
    // operators; its parameter gradient runs reverse mode over a graph that
    // already contains a backward pass.
    ToyOps toy = make_toy_ops(16);
    UNet net(ArchConfig{1, 4, 3, true}, 6);
    auto flat = net.flat_params();
    Rng rng(19);
    for (double& v : flat) v += 0.3 * rng.normal();
    net.set_flat_params(flat);

    Grid x = random_grid(1, 16, 500);
    Grid u = toy.Atilde.apply(x);
    Grid y = toy.A.apply(x);

    auto loss_and_grad = [&](UNet& f, bool want_grad)
        -> std::pair<double, std::vector<double>> {
      std::vector<NodePtr> p = f.param_leaves();
      NodePtr u_node = ad::leaf(ad::tensor_from_grid(u));
      NodePtr f_out = f.build(u_node, p);
      NodePtr r = ad::sub(f_out, ad::constant(ad::tensor_from_grid(y)));
      NodePtr df_star_r = ad::grad_of(f_out, {u_node}, r)[0];
      NodePtr loss = ad::sum_squares(ad::sub(ad::linop_apply(toy.A, true, r),
                                             ad::linop_apply(toy.Atilde, true, df_star_r)));
      std::vector<double> grad;
      if (want_grad) {
        auto gs = ad::grad_of(loss, p);
        for (const auto& g : gs)
          grad.insert(grad.end(), g->value.ptr(), g->value.ptr() + g->value.size());
      }
      return {loss->value.ptr()[0], grad};
    };

    auto [loss0, grad] = loss_and_grad(net, true);
    CHECK(loss0 > 0.0);

    int failures = 0;
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> dir(grad.size());
      Rng drng(derive_seed(9, "ddir", trial));
      for (double& v : dir) v = drng.normal();
      const double h = 1e-5;
      auto at = [&](double sign) {
        std::vector<double> p = net.flat_params();
        for (size_t i = 0; i < p.size(); ++i) p[i] += sign * h * dir[i];
        UNet tmp = net;
        tmp.set_flat_params(p);
        return loss_and_grad(tmp, false).first;
      };
      double fd = (at(1.0) - at(-1.0)) / (2 * h);
      double an = 0.0;
      for (size_t i = 0; i < grad.size(); ++i) an += grad[i] * dir[i];
      if (std::fabs(fd - an) > 1e-4 * std::max(1.0, std::fabs(an))) ++failures;
    }
    CHECK(failures == 0);
  }

  TEST_CASE("checkpoint round trip preserves architecture and parameters") {
    namespace fs = std::filesystem;
    fs::path tmp = fs::temp_directory_path() / "opcorr_ckpt_test";
    fs::create_directories(tmp);
    UNet net(ArchConfig{2, 4, 5, true}, 21);
    auto flat = net.flat_params();
    Rng rng(22);
    for (double& v : flat) v += 0.1 * rng.normal();
    net.set_flat_params(flat);
    net.save((tmp / "n.ckpt").string());
    UNet back = UNet::load((tmp / "n.ckpt").string());
    CHECK(back.arch() == net.arch());
    // parameters survive the float32 storage within its precision
    auto a = net.flat_params(), b = back.flat_params();
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::fabs(a[i] - b[i]));
    CHECK(worst <= 1e-6);
    fs::remove_all(tmp);
  }
}

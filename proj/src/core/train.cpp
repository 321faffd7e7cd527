#include "core/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "core/rng.hpp"

namespace opcorr {

using ad::NodePtr;

namespace {

class Adam {
 public:
  Adam(size_t n, const TrainConfig& cfg)
      : m_(n, 0.0), v_(n, 0.0), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.adam_eps) {}

  void step(UNet& net, const std::vector<double>& grad, double lr) {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, t_);
    double c2 = 1.0 - std::pow(b2_, t_);
    size_t off = 0;
    for (auto& tensor : net.params()) {
      double* p = tensor.ptr();
      for (size_t i = 0; i < tensor.size(); ++i, ++off) {
        double g = grad[off];
        m_[off] = b1_ * m_[off] + (1.0 - b1_) * g;
        v_[off] = b2_ * v_[off] + (1.0 - b2_) * g * g;
        p[i] -= lr * (m_[off] / c1) / (std::sqrt(v_[off] / c2) + eps_);
      }
    }
  }

 private:
  std::vector<double> m_, v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

void accumulate(std::vector<double>& acc, const std::vector<NodePtr>& grads) {
  size_t off = 0;
  for (const auto& g : grads) {
    const ad::Tensor& t = g->value;
    for (size_t i = 0; i < t.size(); ++i, ++off) acc[off] += t.ptr()[i];
  }
}

struct SampleLoss {
  double forward = 0.0;
  double adjoint = 0.0;
  Grid fidelity_gradient;  // reused for the inner variational step
};

// Per-(sample, iterate) losses and parameter gradients for one method.
// x_cur is the current inner iterate; targets come from the accurate pair.
SampleLoss eval_losses(Method method, const Grid& x_cur, const Grid& y,
                       const LinearOp& Atilde, const LinearOp& A, UNet& fnet,
                       UNet* gnet, std::vector<double>& grad_f,
                       std::vector<double>& grad_g) {
  SampleLoss out;
  Grid u = Atilde.apply(x_cur);
  Grid target_fwd = A.apply(x_cur);

  std::vector<NodePtr> pf = fnet.param_leaves();
  NodePtr f_out;
  NodePtr floss;

  if (method == Method::forward_adjoint) {
    NodePtr u_node = ad::constant(ad::tensor_from_grid(u));
    f_out = fnet.build(u_node, pf);
    floss = ad::sum_squares(ad::sub(f_out, ad::constant(ad::tensor_from_grid(target_fwd))));
    out.forward = floss->value.ptr()[0];

    Grid r = ad::grid_from_tensor(f_out->value) - y;  // residual held fixed for G
    Grid g_in = Atilde.adjoint(r);
    Grid target_adj = A.adjoint(r);

    std::vector<NodePtr> pg = gnet->param_leaves();
    NodePtr g_out = gnet->build(ad::constant(ad::tensor_from_grid(g_in)), pg);
    NodePtr gloss =
        ad::sum_squares(ad::sub(g_out, ad::constant(ad::tensor_from_grid(target_adj))));
    out.adjoint = gloss->value.ptr()[0];
    out.fidelity_gradient = ad::grid_from_tensor(g_out->value);

    accumulate(grad_f, ad::grad_of(floss, pf));
    accumulate(grad_g, ad::grad_of(gloss, pg));
  } else {
    // forward_only, eq-style combined loss: forward term plus the penalty
    // || (A* - Atilde* [DF(u)]*) (F(u) - y) ||^2, differentiated through the
    // vector-Jacobian product
    NodePtr u_node = ad::leaf(ad::tensor_from_grid(u));
    f_out = fnet.build(u_node, pf);
    floss = ad::sum_squares(ad::sub(f_out, ad::constant(ad::tensor_from_grid(target_fwd))));
    out.forward = floss->value.ptr()[0];

    NodePtr r_node = ad::sub(f_out, ad::constant(ad::tensor_from_grid(y)));
    NodePtr df_star_r = ad::grad_of(f_out, {u_node}, r_node)[0];
    NodePtr adj_loss = ad::sum_squares(ad::sub(ad::linop_apply(A, true, r_node),
                                               ad::linop_apply(Atilde, true, df_star_r)));
    out.adjoint = adj_loss->value.ptr()[0];
    out.fidelity_gradient = Atilde.adjoint(ad::grid_from_tensor(df_star_r->value));

    accumulate(grad_f, ad::grad_of(ad::add(floss, adj_loss), pf));
  }
  return out;
}

}  // namespace

int ramp_n_iter(int epoch, int epochs, int n_max) {
  int n = 1 + static_cast<int>(std::floor(static_cast<double>(epoch) * n_max / epochs));
  return std::min(n_max, n);
}

TrainResult train_correction(Method method, const std::vector<Grid>& ys,
                             const LinearOp& Atilde, const LinearOp& A,
                             const TrainConfig& cfg, std::shared_ptr<UNet> f_init,
                             std::shared_ptr<UNet> g_init) {
  require(method == Method::forward_only || method == Method::forward_adjoint,
          ErrorKind::config, "train_correction: method must be a learned correction");
  require(!ys.empty(), ErrorKind::input, "train_correction: empty training set");
  require(cfg.epochs >= 1 && cfg.batch >= 1 && cfg.n_max >= 1, ErrorKind::config,
          "train_correction: bad schedule");

  TrainResult res;
  res.F = f_init ? f_init
                 : std::make_shared<UNet>(cfg.arch, derive_seed(cfg.seed, "net.F", 0));
  if (method == Method::forward_adjoint)
    res.G = g_init ? g_init
                   : std::make_shared<UNet>(cfg.arch, derive_seed(cfg.seed, "net.G", 0));

  const int n_samples = static_cast<int>(ys.size());
  std::vector<Grid> x0(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    // the solver's starting iterate: backprojection, projected when the
    // variational problem carries the positivity constraint
    x0[i] = 4.0 * Atilde.adjoint(ys[i]);
    if (cfg.positivity) clip_nonneg(x0[i]);
    require(all_finite(x0[i]), ErrorKind::input,
            "train_correction: non-finite measurement at sample " + std::to_string(i));
  }

  Adam adam_f(res.F->param_count(), cfg);
  std::unique_ptr<Adam> adam_g;
  if (res.G) adam_g = std::make_unique<Adam>(res.G->param_count(), cfg);
  std::vector<double> grad_f(res.F->param_count());
  std::vector<double> grad_g(res.G ? res.G->param_count() : 0);

  // loss at initialisation, on the starting iterates
  {
    std::vector<double> tmp_f(grad_f.size(), 0.0), tmp_g(grad_g.size(), 0.0);
    double fsum = 0.0, asum = 0.0;
    for (int i = 0; i < n_samples; ++i) {
      SampleLoss sl = eval_losses(method, x0[i], ys[i], Atilde, A, *res.F,
                                  res.G.get(), tmp_f, tmp_g);
      fsum += sl.forward;
      asum += sl.adjoint;
    }
    res.initial_forward_loss = fsum / n_samples;
    res.initial_adjoint_loss = asum / n_samples;
  }

  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t_start = std::chrono::steady_clock::now();
    const int n_iter = ramp_n_iter(epoch, cfg.epochs, cfg.n_max);
    double lr = cfg.lr;
    if (epoch >= cfg.epochs / 2) lr *= 0.5;
    if (epoch >= (3 * cfg.epochs) / 4) lr *= 0.5;

    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
    for (int i = n_samples - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    EpochStats stats;
    stats.epoch = epoch;
    stats.n_iter = n_iter;
    double fsum = 0.0, asum = 0.0;
    long terms = 0;

    for (int start = 0; start < n_samples; start += cfg.batch) {
      int bsz = std::min(cfg.batch, n_samples - start);
      std::fill(grad_f.begin(), grad_f.end(), 0.0);
      std::fill(grad_g.begin(), grad_g.end(), 0.0);
      long batch_terms = 0;

      for (int b = 0; b < bsz; ++b) {
        int idx = order[start + b];
        Grid x_cur = x0[idx];
        for (int it = 0; it < n_iter; ++it) {
          SampleLoss sl = eval_losses(method, x_cur, ys[idx], Atilde, A, *res.F,
                                      res.G.get(), grad_f, grad_g);
          require(std::isfinite(sl.forward) && std::isfinite(sl.adjoint),
                  ErrorKind::numeric,
                  "train_correction: non-finite loss at sample " + std::to_string(idx) +
                      ", inner step " + std::to_string(it));
          fsum += sl.forward;
          asum += sl.adjoint;
          ++terms;
          ++batch_terms;
          ++stats.inner_steps;

          if (it + 1 < n_iter) {
            Grid g_fid = cfg.unroll_accurate
                             ? A.adjoint(A.apply(x_cur) - ys[idx])
                             : sl.fidelity_gradient;
            Grid g_reg = huber_grad(x_cur, cfg.delta);
            axpy(x_cur, -cfg.mu, g_fid);
            axpy(x_cur, -cfg.mu * cfg.lambda, g_reg);
            if (cfg.positivity) clip_nonneg(x_cur);
            require(all_finite(x_cur), ErrorKind::numeric,
                    "train_correction: non-finite iterate at sample " +
                        std::to_string(idx) + ", inner step " + std::to_string(it + 1));
          }
        }
      }

      double inv = 1.0 / static_cast<double>(batch_terms);
      for (double& g : grad_f) g *= inv;
      adam_f.step(*res.F, grad_f, lr);
      if (res.G) {
        for (double& g : grad_g) g *= inv;
        adam_g->step(*res.G, grad_g, lr);
      }
    }

    stats.forward_loss = fsum / terms;
    stats.adjoint_loss = asum / terms;
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    res.trace.push_back(stats);
  }
  return res;
}

TrainResult train_forward_only(const std::vector<Grid>& ys, const LinearOp& Atilde,
                               const LinearOp& A, TrainConfig cfg) {
  cfg.n_max = 1;
  return train_correction(Method::forward_only, ys, Atilde, A, cfg);
}

TrainResult train_forward_adjoint(const std::vector<Grid>& ys, const LinearOp& Atilde,
                                  const LinearOp& A, TrainConfig cfg) {
  cfg.n_max = 1;
  return train_correction(Method::forward_adjoint, ys, Atilde, A, cfg);
}

TrainResult train_recursive(Method method, const std::vector<Grid>& ys,
                            const LinearOp& Atilde, const LinearOp& A,
                            const TrainConfig& cfg, std::shared_ptr<UNet> f_init,
                            std::shared_ptr<UNet> g_init) {
  return train_correction(method, ys, Atilde, A, cfg, std::move(f_init),
                          std::move(g_init));
}

void write_training_csv(const std::string& path, const TrainResult& result) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::io, "cannot write " + path);
  out << "epoch,forward_loss,adjoint_loss,n_iter,seconds\n";
  char buf[256];
  for (const auto& s : result.trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%d,%.3f\n", s.epoch, s.forward_loss,
                  s.adjoint_loss, s.n_iter, s.seconds);
    out << buf;
  }
}

}  // namespace opcorr

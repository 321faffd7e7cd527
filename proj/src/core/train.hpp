#pragma once

#include <memory>
#include <vector>

#include "core/corrected.hpp"
#include "core/solve.hpp"

namespace opcorr {

struct TrainConfig {
  double lr = 1e-4;
  int batch = 16;
  int epochs = 30;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int n_max = 1;  // maximum recursion depth; 1 = train on x0 only
  // inner variational step for recursive unrolling
  double mu = 0.2;
  double lambda = 1e-3;
  double delta = 0.01;
  bool positivity = true;
  ArchConfig arch;
  uint64_t seed = 1;
  // experimental: unroll the accurate operator's trajectory instead of the
  // corrected one (no acceptance weight)
  bool unroll_accurate = false;
};

struct EpochStats {
  int epoch = 0;
  double forward_loss = 0.0;  // mean squared-norm forward loss
  double adjoint_loss = 0.0;  // mean squared-norm adjoint loss / penalty
  int n_iter = 0;             // recursion depth used this epoch
  double seconds = 0.0;
  long inner_steps = 0;  // unrolled gradient evaluations this epoch
};

struct TrainResult {
  std::shared_ptr<UNet> F;
  std::shared_ptr<UNet> G;  // null for forward_only
  std::vector<EpochStats> trace;
  double initial_forward_loss = 0.0;
  double initial_adjoint_loss = 0.0;
};

// Shared engine for both correction methods. Training pairs are built from
// the measurements alone: x0 = 4 Atilde* y, forward targets A x^n, adjoint
// targets A* r. With n_max > 1 the inner iterates of the variational solve
// (using the current networks) are added to each sample, with N_iter ramping
// from 1 to n_max over the epochs; the corrected gradient is computed once
// and reused for both the inner step and the loss.
TrainResult train_correction(Method method, const std::vector<Grid>& ys,
                             const LinearOp& Atilde, const LinearOp& A,
                             const TrainConfig& cfg,
                             std::shared_ptr<UNet> f_init = nullptr,
                             std::shared_ptr<UNet> g_init = nullptr);

// named entry points; the non-recursive trainers force n_max = 1
TrainResult train_forward_only(const std::vector<Grid>& ys, const LinearOp& Atilde,
                               const LinearOp& A, TrainConfig cfg);
TrainResult train_forward_adjoint(const std::vector<Grid>& ys, const LinearOp& Atilde,
                                  const LinearOp& A, TrainConfig cfg);
TrainResult train_recursive(Method method, const std::vector<Grid>& ys,
                            const LinearOp& Atilde, const LinearOp& A,
                            const TrainConfig& cfg,
                            std::shared_ptr<UNet> f_init = nullptr,
                            std::shared_ptr<UNet> g_init = nullptr);

// recursion schedule: min(n_max, 1 + floor(epoch/epochs * n_max))
int ramp_n_iter(int epoch, int epochs, int n_max);

void write_training_csv(const std::string& path, const TrainResult& result);

}  // namespace opcorr

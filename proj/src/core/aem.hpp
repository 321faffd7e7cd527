#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "core/linop.hpp"

namespace opcorr {

// Sample statistics of the model error eps^i = A x^i - Atilde x^i, plus the
// whitening factor L with L^T L = (Gamma + jitter I)^{-1}.
struct ErrorStats {
  Eigen::VectorXd eta;    // mean model error, flattened measurement
  Eigen::MatrixXd gamma;  // dense covariance
  double jitter = 0.0;
  Eigen::MatrixXd chol;   // lower Cholesky factor M of (Gamma + jitter I); L = M^{-1}

  Shape data_shape;  // measurement shape the statistics were estimated on

  // L v via triangular solve with the stored factor
  Eigen::VectorXd whiten_apply(const Eigen::VectorXd& v) const;
  // (Gamma + jitter I)^{-1} v = L^T L v
  Eigen::VectorXd precision_apply(const Eigen::VectorXd& v) const;
};

// eta = mean(eps), gamma = 1/(N-1) sum eps eps^T - eta eta^T.
// Requires N >= 2 samples.
void estimate_error_stats(const std::vector<Grid>& samples, const LinearOp& A,
                          const LinearOp& Atilde, Eigen::VectorXd& eta,
                          Eigen::MatrixXd& gamma);

// Cholesky factor of (gamma + jitter I); jitter < 0 selects the default
// 1e-6 * trace(gamma)/d with a 1e-12 floor. Returns the stats with chol set.
// extra_noise_var, when positive, merges an additive sigma^2 I noise term
// into gamma before factoring (enhanced error model).
ErrorStats whiten(const Eigen::VectorXd& eta, const Eigen::MatrixXd& gamma,
                  double jitter = -1.0, double extra_noise_var = 0.0);

// Explicit L = M^{-1} (for small problems / tests).
Eigen::MatrixXd whitening_matrix(const ErrorStats& stats);

// gradient of 1/2 || L (Atilde x - y + eta) ||^2:
//   Atilde^* L^T L (Atilde x - y + eta)
Grid aem_gradient(const Grid& x, const Grid& y, const LinearOp& Atilde,
                  const ErrorStats& stats);

// objective value 1/2 || L (Atilde x - y + eta) ||^2
double aem_data_term(const Grid& x, const Grid& y, const LinearOp& Atilde,
                     const ErrorStats& stats);

// versioned binary blob: JSON header + eta + gamma
void save_error_stats(const std::string& path, const ErrorStats& stats);
ErrorStats load_error_stats(const std::string& path);

Eigen::VectorXd flatten(const Grid& g);
Grid unflatten(const Eigen::VectorXd& v, int rows, int cols);

}  // namespace opcorr

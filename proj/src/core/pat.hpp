#pragma once

#include <fftw3.h>

#include <memory>
#include <mutex>
#include <vector>

#include "core/linop.hpp"

namespace opcorr {

// 2D photoacoustic forward models on an n x n grid with a line detector along
// the top row. Measurements are n x n_t space-time grids (detector index x
// time sample).
struct PatConfig {
  int n = 64;
  double c = 1.0;
  double dx = 1.0;
  double dt = 1.0;
  int n_t = 64;
  double theta_max = 60.0;  // degrees
  int pad_factor = 2;

  void validate() const;
};

// Accurate model: exact spectral solution of the wave equation with zero
// initial velocity on a zero-padded periodic grid; pressure at step k is
// IFFT2(cos(c |k| t) FFT2(x_pad)), sampled on the detector line.
//
// Approximate model: FFT2 of the unpadded image, nearest-bin regridding of
// (k1, k2) onto a rectangular (k1, omega) grid via the dispersion relation,
// thresholded weighting factor B, cosine transform omega -> t and 1D inverse
// FFT k1 -> detector coordinate. The regridding and thresholding introduce
// the systematic error that the corrections target.
class PatOperator {
 public:
  explicit PatOperator(const PatConfig& cfg);
  ~PatOperator();
  PatOperator(const PatOperator&) = delete;
  PatOperator& operator=(const PatOperator&) = delete;

  const PatConfig& config() const { return cfg_; }
  Shape image_shape() const { return {cfg_.n, cfg_.n}; }
  Shape data_shape() const { return {cfg_.n, cfg_.n_t}; }

  Grid apply_accurate(const Grid& x);
  Grid adjoint_accurate(const Grid& y);
  Grid apply_approx(const Grid& x);
  Grid adjoint_approx(const Grid& y);

 private:
  PatConfig cfg_;
  int pad_n_;  // padded grid size for the accurate model

  std::vector<double> ctab_;     // [n_t][N*N] cos(c |k| t_j), padded grid
  int n_omega_ = 0;              // omega bins of the regridding target
  std::vector<int> bin_;         // [n*n] omega bin per (ky, kx)
  std::vector<double> weight_;   // [n][n_omega] thresholded B/c^2
  std::vector<double> costx_;    // [n_t][n_omega] cos(omega_m t_j)

  std::mutex work_mutex_;
  fftw_complex* buf_big_a_ = nullptr;  // N*N work buffers
  fftw_complex* buf_big_b_ = nullptr;
  fftw_complex* buf_small_a_ = nullptr;  // n*n work buffers
  fftw_complex* buf_small_b_ = nullptr;
  fftw_complex* line_big_a_ = nullptr;  // length-N line buffers
  fftw_complex* line_big_b_ = nullptr;
  fftw_complex* line_small_a_ = nullptr;  // length-n line buffers
  fftw_complex* line_small_b_ = nullptr;
  fftw_plan fwd2_big_ = nullptr, bwd2_big_ = nullptr;
  fftw_plan fwd1_big_ = nullptr, bwd1_big_ = nullptr;
  fftw_plan fwd2_small_ = nullptr, bwd2_small_ = nullptr;
  fftw_plan fwd1_small_ = nullptr, bwd1_small_ = nullptr;
};

// Operator pair with shared implementation; the LinearOps keep the
// implementation alive through a shared_ptr.
struct PatOps {
  std::shared_ptr<PatOperator> impl;
  LinearOp accurate;
  LinearOp approx;
};

PatOps make_pat_ops(const PatConfig& cfg);

// signed FFT frequency in rad per length unit for index `idx` of an M-point
// transform with sample spacing d
double fft_freq(int idx, int m, double d);

}  // namespace opcorr

#include "core/pat.hpp"

#include <cmath>
#include <cstring>

namespace opcorr {

namespace {
// FFTW planning is not reentrant.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

double fft_freq(int idx, int m, double d) {
  int s = (idx <= m / 2) ? idx : idx - m;
  return 2.0 * M_PI * static_cast<double>(s) / (static_cast<double>(m) * d);
}

void PatConfig::validate() const {
  require(n >= 4 && n % 2 == 0, ErrorKind::config, "pat: n must be even and >= 4");
  require(n_t >= 1, ErrorKind::config, "pat: n_t must be >= 1");
  require(c > 0 && dx > 0 && dt > 0, ErrorKind::config, "pat: c, dx, dt must be positive");
  require(pad_factor >= 1, ErrorKind::config, "pat: pad_factor must be >= 1");
  require(theta_max > 0.0 && theta_max < 90.0, ErrorKind::config,
          "pat: theta_max must lie in (0, 90) degrees");
  require(c * dt <= dx * pad_factor, ErrorKind::config,
          "pat: wrap-around condition c*dt <= dx*pad_factor violated");
  // Wave from the farthest source row must not reach the detector through the
  // periodic boundary within the recording window.
  double travel = c * dt * static_cast<double>(n_t - 1);
  double pad_path = (static_cast<double>(pad_factor - 1) * n + 1.0) * dx;
  require(travel < pad_path, ErrorKind::config,
          "pat: recording window too long for pad_factor (periodic wrap-around)");
}

PatOperator::PatOperator(const PatConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int n = cfg_.n;
  const int nt = cfg_.n_t;
  pad_n_ = cfg_.pad_factor * n;
  const int N = pad_n_;

  // cos(c |k| t_j) on the padded grid, one table per time step
  std::vector<double> kmag(static_cast<size_t>(N) * N);
  for (int ky = 0; ky < N; ++ky) {
    double fy = fft_freq(ky, N, cfg_.dx);
    for (int kx = 0; kx < N; ++kx) {
      double fx = fft_freq(kx, N, cfg_.dx);
      kmag[static_cast<size_t>(ky) * N + kx] = std::sqrt(fx * fx + fy * fy);
    }
  }
  ctab_.resize(static_cast<size_t>(nt) * N * N);
  for (int j = 0; j < nt; ++j) {
    double t = cfg_.dt * j;
    double* dst = ctab_.data() + static_cast<size_t>(j) * N * N;
    for (size_t i = 0; i < kmag.size(); ++i) dst[i] = std::cos(cfg_.c * kmag[i] * t);
  }

  // Regridding tables for the approximate model: omega bins, thresholded
  // weight, and the omega -> t cosine matrix. The omega grid oversamples the
  // time-sampling rate so the nearest-bin deposit stays phase-coherent; the
  // systematic error comes from the thresholded singular weighting, the
  // fold-over of frequencies beyond the time-sampling Nyquist, and the
  // unpadded (circular) detector axis.
  const double domega = M_PI / (8.0 * cfg_.dt * nt);
  const double omega_max = cfg_.c * M_SQRT2 * M_PI / cfg_.dx;
  n_omega_ = static_cast<int>(std::ceil(omega_max / domega)) + 1;
  bin_.resize(static_cast<size_t>(n) * n);
  for (int ky = 0; ky < n; ++ky) {
    double fy = fft_freq(ky, n, cfg_.dx);
    for (int kx = 0; kx < n; ++kx) {
      double fx = fft_freq(kx, n, cfg_.dx);
      double omega = cfg_.c * std::sqrt(fx * fx + fy * fy);
      int m = static_cast<int>(std::lround(omega / domega));
      bin_[static_cast<size_t>(ky) * n + kx] = std::min(m, n_omega_ - 1);
    }
  }
  const double sin2_max = std::pow(std::sin(cfg_.theta_max * M_PI / 180.0), 2);
  weight_.resize(static_cast<size_t>(n) * n_omega_, 0.0);
  for (int kx = 0; kx < n; ++kx) {
    double k1 = fft_freq(kx, n, cfg_.dx);
    for (int m = 1; m < n_omega_; ++m) {  // omega = 0 bin stays zero
      double omega = m * domega;
      double disc = omega * omega - cfg_.c * cfg_.c * k1 * k1;
      if (cfg_.c * cfg_.c * k1 * k1 > omega * omega * sin2_max) continue;
      weight_[static_cast<size_t>(kx) * n_omega_ + m] = omega / (cfg_.c * std::sqrt(disc));
    }
  }
  costx_.resize(static_cast<size_t>(nt) * n_omega_);
  for (int j = 0; j < nt; ++j)
    for (int m = 0; m < n_omega_; ++m)
      costx_[static_cast<size_t>(j) * n_omega_ + m] = std::cos(m * domega * j * cfg_.dt);

  std::lock_guard<std::mutex> lock(plan_mutex());
  buf_big_a_ = fftw_alloc_complex(static_cast<size_t>(N) * N);
  buf_big_b_ = fftw_alloc_complex(static_cast<size_t>(N) * N);
  buf_small_a_ = fftw_alloc_complex(static_cast<size_t>(n) * n);
  buf_small_b_ = fftw_alloc_complex(static_cast<size_t>(n) * n);
  line_big_a_ = fftw_alloc_complex(N);
  line_big_b_ = fftw_alloc_complex(N);
  line_small_a_ = fftw_alloc_complex(n);
  line_small_b_ = fftw_alloc_complex(n);
  fwd2_big_ = fftw_plan_dft_2d(N, N, buf_big_a_, buf_big_b_, FFTW_FORWARD, FFTW_ESTIMATE);
  bwd2_big_ = fftw_plan_dft_2d(N, N, buf_big_a_, buf_big_b_, FFTW_BACKWARD, FFTW_ESTIMATE);
  fwd1_big_ = fftw_plan_dft_1d(N, line_big_a_, line_big_b_, FFTW_FORWARD, FFTW_ESTIMATE);
  bwd1_big_ = fftw_plan_dft_1d(N, line_big_a_, line_big_b_, FFTW_BACKWARD, FFTW_ESTIMATE);
  fwd2_small_ = fftw_plan_dft_2d(n, n, buf_small_a_, buf_small_b_, FFTW_FORWARD, FFTW_ESTIMATE);
  bwd2_small_ = fftw_plan_dft_2d(n, n, buf_small_a_, buf_small_b_, FFTW_BACKWARD, FFTW_ESTIMATE);
  fwd1_small_ = fftw_plan_dft_1d(n, line_small_a_, line_small_b_, FFTW_FORWARD, FFTW_ESTIMATE);
  bwd1_small_ = fftw_plan_dft_1d(n, line_small_a_, line_small_b_, FFTW_BACKWARD, FFTW_ESTIMATE);
}

PatOperator::~PatOperator() {
  std::lock_guard<std::mutex> lock(plan_mutex());
  for (fftw_plan p : {fwd2_big_, bwd2_big_, fwd1_big_, bwd1_big_, fwd2_small_,
                      bwd2_small_, fwd1_small_, bwd1_small_})
    if (p) fftw_destroy_plan(p);
  for (fftw_complex* b : {buf_big_a_, buf_big_b_, buf_small_a_, buf_small_b_,
                          line_big_a_, line_big_b_, line_small_a_, line_small_b_})
    if (b) fftw_free(b);
}

Grid PatOperator::apply_accurate(const Grid& x) {
  const int n = cfg_.n, nt = cfg_.n_t, N = pad_n_;
  require(x.rows() == n && x.cols() == n, ErrorKind::input,
          "pat accurate apply: image shape mismatch");
  std::lock_guard<std::mutex> lock(work_mutex_);

  std::memset(buf_big_a_, 0, sizeof(fftw_complex) * N * N);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) buf_big_a_[static_cast<size_t>(r) * N + c][0] = x(r, c);
  fftw_execute(fwd2_big_);  // spectrum in buf_big_b_

  const double scale = 1.0 / (static_cast<double>(N) * N);
  Grid y(n, nt);
  for (int j = 0; j < nt; ++j) {
    const double* ct = ctab_.data() + static_cast<size_t>(j) * N * N;
    std::memset(line_big_a_, 0, sizeof(fftw_complex) * N);
    for (int ky = 0; ky < N; ++ky) {
      const fftw_complex* row = buf_big_b_ + static_cast<size_t>(ky) * N;
      const double* crow = ct + static_cast<size_t>(ky) * N;
      for (int kx = 0; kx < N; ++kx) {
        line_big_a_[kx][0] += crow[kx] * row[kx][0];
        line_big_a_[kx][1] += crow[kx] * row[kx][1];
      }
    }
    fftw_execute(bwd1_big_);
    for (int det = 0; det < n; ++det) y(det, j) = line_big_b_[det][0] * scale;
  }
  return y;
}

Grid PatOperator::adjoint_accurate(const Grid& y) {
  const int n = cfg_.n, nt = cfg_.n_t, N = pad_n_;
  require(y.rows() == n && y.cols() == nt, ErrorKind::input,
          "pat accurate adjoint: data shape mismatch");
  std::lock_guard<std::mutex> lock(work_mutex_);

  const double scale = 1.0 / (static_cast<double>(N) * N);
  std::memset(buf_big_a_, 0, sizeof(fftw_complex) * N * N);
  for (int j = 0; j < nt; ++j) {
    std::memset(line_big_a_, 0, sizeof(fftw_complex) * N);
    for (int det = 0; det < n; ++det) line_big_a_[det][0] = y(det, j);
    fftw_execute(fwd1_big_);
    const double* ct = ctab_.data() + static_cast<size_t>(j) * N * N;
    for (int ky = 0; ky < N; ++ky) {
      fftw_complex* row = buf_big_a_ + static_cast<size_t>(ky) * N;
      const double* crow = ct + static_cast<size_t>(ky) * N;
      for (int kx = 0; kx < N; ++kx) {
        row[kx][0] += crow[kx] * line_big_b_[kx][0] * scale;
        row[kx][1] += crow[kx] * line_big_b_[kx][1] * scale;
      }
    }
  }
  fftw_execute(bwd2_big_);
  Grid x(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) x(r, c) = buf_big_b_[static_cast<size_t>(r) * N + c][0];
  return x;
}

Grid PatOperator::apply_approx(const Grid& x) {
  const int n = cfg_.n, nt = cfg_.n_t;
  require(x.rows() == n && x.cols() == n, ErrorKind::input,
          "pat approx apply: image shape mismatch");
  std::lock_guard<std::mutex> lock(work_mutex_);

  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      buf_small_a_[static_cast<size_t>(r) * n + c][0] = x(r, c);
      buf_small_a_[static_cast<size_t>(r) * n + c][1] = 0.0;
    }
  fftw_execute(fwd2_small_);

  // nearest-bin deposit (k1, k2) -> (k1, omega), then thresholded weight
  const int nw = n_omega_;
  std::vector<double> dep(static_cast<size_t>(n) * nw * 2, 0.0);
  for (int ky = 0; ky < n; ++ky)
    for (int kx = 0; kx < n; ++kx) {
      int m = bin_[static_cast<size_t>(ky) * n + kx];
      const fftw_complex& v = buf_small_b_[static_cast<size_t>(ky) * n + kx];
      double* d = &dep[(static_cast<size_t>(kx) * nw + m) * 2];
      d[0] += v[0];
      d[1] += v[1];
    }
  for (int kx = 0; kx < n; ++kx)
    for (int m = 0; m < nw; ++m) {
      double w = weight_[static_cast<size_t>(kx) * nw + m];
      dep[(static_cast<size_t>(kx) * nw + m) * 2] *= w;
      dep[(static_cast<size_t>(kx) * nw + m) * 2 + 1] *= w;
    }

  const double scale = 1.0 / (static_cast<double>(n) * n);
  Grid y(n, nt);
  for (int j = 0; j < nt; ++j) {
    const double* ct = costx_.data() + static_cast<size_t>(j) * nw;
    for (int kx = 0; kx < n; ++kx) {
      double re = 0.0, im = 0.0;
      const double* __restrict__ d = &dep[static_cast<size_t>(kx) * nw * 2];
      for (int m = 0; m < nw; ++m) {
        re += ct[m] * d[2 * m];
        im += ct[m] * d[2 * m + 1];
      }
      line_small_a_[kx][0] = re;
      line_small_a_[kx][1] = im;
    }
    fftw_execute(bwd1_small_);
    for (int det = 0; det < n; ++det) y(det, j) = line_small_b_[det][0] * scale;
  }
  return y;
}

Grid PatOperator::adjoint_approx(const Grid& y) {
  const int n = cfg_.n, nt = cfg_.n_t;
  require(y.rows() == n && y.cols() == nt, ErrorKind::input,
          "pat approx adjoint: data shape mismatch");
  std::lock_guard<std::mutex> lock(work_mutex_);

  const double scale = 1.0 / (static_cast<double>(n) * n);
  const int nw = n_omega_;
  std::vector<double> dep(static_cast<size_t>(n) * nw * 2, 0.0);
  for (int j = 0; j < nt; ++j) {
    for (int det = 0; det < n; ++det) {
      line_small_a_[det][0] = y(det, j);
      line_small_a_[det][1] = 0.0;
    }
    fftw_execute(fwd1_small_);
    const double* ct = costx_.data() + static_cast<size_t>(j) * nw;
    for (int kx = 0; kx < n; ++kx) {
      double re = line_small_b_[kx][0] * scale;
      double im = line_small_b_[kx][1] * scale;
      double* __restrict__ d = &dep[static_cast<size_t>(kx) * nw * 2];
      for (int m = 0; m < nw; ++m) {
        d[2 * m] += ct[m] * re;
        d[2 * m + 1] += ct[m] * im;
      }
    }
  }
  for (int kx = 0; kx < n; ++kx)
    for (int m = 0; m < nw; ++m) {
      double w = weight_[static_cast<size_t>(kx) * nw + m];
      dep[(static_cast<size_t>(kx) * nw + m) * 2] *= w;
      dep[(static_cast<size_t>(kx) * nw + m) * 2 + 1] *= w;
    }

  // scatter-back through the deposit map, then inverse FFT2
  for (int ky = 0; ky < n; ++ky)
    for (int kx = 0; kx < n; ++kx) {
      int m = bin_[static_cast<size_t>(ky) * n + kx];
      fftw_complex& v = buf_small_a_[static_cast<size_t>(ky) * n + kx];
      v[0] = dep[(static_cast<size_t>(kx) * nw + m) * 2];
      v[1] = dep[(static_cast<size_t>(kx) * nw + m) * 2 + 1];
    }
  fftw_execute(bwd2_small_);
  Grid x(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) x(r, c) = buf_small_b_[static_cast<size_t>(r) * n + c][0];
  return x;
}

PatOps make_pat_ops(const PatConfig& cfg) {
  auto impl = std::make_shared<PatOperator>(cfg);
  Shape img = impl->image_shape();
  Shape dat = impl->data_shape();
  PatOps ops;
  ops.impl = impl;
  ops.accurate = LinearOp{
      "pat_accurate", img, dat,
      [impl](const Grid& x) { return impl->apply_accurate(x); },
      [impl](const Grid& y) { return impl->adjoint_accurate(y); }};
  ops.approx = LinearOp{
      "pat_approx", img, dat,
      [impl](const Grid& x) { return impl->apply_approx(x); },
      [impl](const Grid& y) { return impl->adjoint_approx(y); }};
  return ops;
}

}  // namespace opcorr

#include "core/aem.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>

namespace opcorr {

Eigen::VectorXd flatten(const Grid& g) {
  return Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
}

Grid unflatten(const Eigen::VectorXd& v, int rows, int cols) {
  require(v.size() == static_cast<Eigen::Index>(rows) * cols, ErrorKind::input,
          "unflatten: size mismatch");
  Grid g(rows, cols);
  std::memcpy(g.data(), v.data(), sizeof(double) * g.size());
  return g;
}

Eigen::VectorXd ErrorStats::whiten_apply(const Eigen::VectorXd& v) const {
  // L = M^{-1}, so L v solves M w = v
  return chol.triangularView<Eigen::Lower>().solve(v);
}

Eigen::VectorXd ErrorStats::precision_apply(const Eigen::VectorXd& v) const {
  Eigen::VectorXd w = chol.triangularView<Eigen::Lower>().solve(v);
  return chol.transpose().triangularView<Eigen::Upper>().solve(w);
}

void estimate_error_stats(const std::vector<Grid>& samples, const LinearOp& A,
                          const LinearOp& Atilde, Eigen::VectorXd& eta,
                          Eigen::MatrixXd& gamma) {
  const int n = static_cast<int>(samples.size());
  require(n >= 2, ErrorKind::input,
          "estimate_error_stats: need at least 2 samples for the unbiased covariance");
  const Eigen::Index d = static_cast<Eigen::Index>(A.range.count());
  Eigen::MatrixXd eps(d, n);
  for (int i = 0; i < n; ++i) {
    Grid e = A.apply(samples[i]) - Atilde.apply(samples[i]);
    eps.col(i) = flatten(e);
  }
  eta = eps.rowwise().mean();
  gamma = (eps * eps.transpose()) / static_cast<double>(n - 1) - eta * eta.transpose();
}

ErrorStats whiten(const Eigen::VectorXd& eta, const Eigen::MatrixXd& gamma,
                  double jitter, double extra_noise_var) {
  require(gamma.rows() == gamma.cols(), ErrorKind::input, "whiten: gamma must be square");
  require(gamma.rows() == eta.size(), ErrorKind::input, "whiten: eta/gamma size mismatch");
  double asym = (gamma - gamma.transpose()).cwiseAbs().maxCoeff();
  double scale = std::max(1.0, gamma.cwiseAbs().maxCoeff());
  require(asym <= 1e-8 * scale, ErrorKind::input, "whiten: gamma is not symmetric");

  ErrorStats stats;
  stats.eta = eta;
  stats.gamma = gamma;
  if (extra_noise_var > 0.0)
    stats.gamma += extra_noise_var *
                   Eigen::MatrixXd::Identity(gamma.rows(), gamma.cols());
  if (jitter < 0.0) {
    jitter = 1e-6 * stats.gamma.trace() / static_cast<double>(stats.gamma.rows());
    if (jitter <= 0.0) jitter = 1e-12;
  }
  stats.jitter = jitter;

  Eigen::MatrixXd reg = stats.gamma;
  reg.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  require(llt.info() == Eigen::Success, ErrorKind::numeric,
          "whiten: Cholesky failed (gamma not PSD even with jitter)");
  stats.chol = llt.matrixL();
  return stats;
}

Eigen::MatrixXd whitening_matrix(const ErrorStats& stats) {
  Eigen::Index d = stats.chol.rows();
  return stats.chol.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(d, d));
}

Grid aem_gradient(const Grid& x, const Grid& y, const LinearOp& Atilde,
                  const ErrorStats& stats) {
  require(Shape{y.rows(), y.cols()} == Atilde.range, ErrorKind::input,
          "aem_gradient: data shape mismatch");
  Grid r = Atilde.apply(x) - y;
  Eigen::VectorXd v = flatten(r) + stats.eta;
  Eigen::VectorXd w = stats.precision_apply(v);
  return Atilde.adjoint(unflatten(w, y.rows(), y.cols()));
}

double aem_data_term(const Grid& x, const Grid& y, const LinearOp& Atilde,
                     const ErrorStats& stats) {
  Grid r = Atilde.apply(x) - y;
  Eigen::VectorXd v = flatten(r) + stats.eta;
  return 0.5 * stats.whiten_apply(v).squaredNorm();
}

void save_error_stats(const std::string& path, const ErrorStats& stats) {
  nlohmann::json hdr;
  hdr["format"] = "opcorr-error-stats";
  hdr["version"] = 1;
  hdr["d"] = stats.eta.size();
  hdr["jitter"] = stats.jitter;
  hdr["rows"] = stats.data_shape.rows;
  hdr["cols"] = stats.data_shape.cols;
  std::string h = hdr.dump();
  uint64_t hlen = h.size();

  FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorKind::io, "cannot write " + path);
  bool ok = std::fwrite(&hlen, 8, 1, f) == 1 &&
            std::fwrite(h.data(), 1, h.size(), f) == h.size();
  ok = ok && std::fwrite(stats.eta.data(), sizeof(double), stats.eta.size(), f) ==
                 static_cast<size_t>(stats.eta.size());
  ok = ok && std::fwrite(stats.gamma.data(), sizeof(double), stats.gamma.size(), f) ==
                 static_cast<size_t>(stats.gamma.size());
  std::fclose(f);
  require(ok, ErrorKind::io, "short write: " + path);
}

ErrorStats load_error_stats(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  require(f != nullptr, ErrorKind::io, "cannot read " + path);
  uint64_t hlen = 0;
  bool ok = std::fread(&hlen, 8, 1, f) == 1 && hlen < (1u << 20);
  std::string h(hlen, '\0');
  ok = ok && std::fread(h.data(), 1, hlen, f) == hlen;
  if (!ok) {
    std::fclose(f);
    fail(ErrorKind::io, "bad stats header: " + path);
  }
  nlohmann::json hdr = nlohmann::json::parse(h);
  Eigen::Index d = hdr.at("d").get<Eigen::Index>();
  Eigen::VectorXd eta(d);
  Eigen::MatrixXd gamma(d, d);
  ok = std::fread(eta.data(), sizeof(double), d, f) == static_cast<size_t>(d) &&
       std::fread(gamma.data(), sizeof(double), gamma.size(), f) ==
           static_cast<size_t>(gamma.size());
  std::fclose(f);
  require(ok, ErrorKind::io, "short read: " + path);

  ErrorStats stats = whiten(eta, gamma, hdr.at("jitter").get<double>());
  stats.data_shape = {hdr.at("rows").get<int>(), hdr.at("cols").get<int>()};
  return stats;
}

}  // namespace opcorr

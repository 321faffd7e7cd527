#include "core/grid.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace opcorr {

double norm2(const Grid& g) {
  double s = 0.0;
  for (double x : g.vec()) s += x * x;
  return std::sqrt(s);
}

double dot(const Grid& a, const Grid& b) {
  require(a.same_shape(b), ErrorKind::input, "dot: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a.vec()[i] * b.vec()[i];
  return s;
}

double max_abs(const Grid& g) {
  double m = 0.0;
  for (double x : g.vec()) m = std::max(m, std::fabs(x));
  return m;
}

double max_val(const Grid& g) {
  double m = -HUGE_VAL;
  for (double x : g.vec()) m = std::max(m, x);
  return m;
}

double min_val(const Grid& g) {
  double m = HUGE_VAL;
  for (double x : g.vec()) m = std::min(m, x);
  return m;
}

bool all_finite(const Grid& g) {
  for (double x : g.vec())
    if (!std::isfinite(x)) return false;
  return true;
}

Grid operator+(const Grid& a, const Grid& b) {
  require(a.same_shape(b), ErrorKind::input, "grid +: shape mismatch");
  Grid out = a;
  for (size_t i = 0; i < out.size(); ++i) out.vec()[i] += b.vec()[i];
  return out;
}

Grid operator-(const Grid& a, const Grid& b) {
  require(a.same_shape(b), ErrorKind::input, "grid -: shape mismatch");
  Grid out = a;
  for (size_t i = 0; i < out.size(); ++i) out.vec()[i] -= b.vec()[i];
  return out;
}

Grid operator*(double s, const Grid& a) {
  Grid out = a;
  for (double& x : out.vec()) x *= s;
  return out;
}

void axpy(Grid& a, double s, const Grid& b) {
  require(a.same_shape(b), ErrorKind::input, "axpy: shape mismatch");
  for (size_t i = 0; i < a.size(); ++i) a.vec()[i] += s * b.vec()[i];
}

void clip_nonneg(Grid& g) {
  for (double& x : g.vec())
    if (x < 0.0) x = 0.0;
}

double rel_l2(const Grid& a, const Grid& b) {
  double nb = norm2(b);
  require(nb > 0.0, ErrorKind::input, "rel_l2: reference has zero norm");
  return norm2(a - b) / nb;
}

namespace {
constexpr char kMagic[4] = {'O', 'P', 'C', '1'};
constexpr uint32_t kFormatVersion = 1;
}  // namespace

void write_grid(const std::string& path, const Grid& g) {
  FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorKind::io, "cannot open for write: " + path);
  uint32_t rows = static_cast<uint32_t>(g.rows());
  uint32_t cols = static_cast<uint32_t>(g.cols());
  bool ok = std::fwrite(kMagic, 1, 4, f) == 4 &&
            std::fwrite(&rows, 4, 1, f) == 1 && std::fwrite(&cols, 4, 1, f) == 1 &&
            std::fwrite(&kFormatVersion, 4, 1, f) == 1 &&
            std::fwrite(g.data(), sizeof(double), g.size(), f) == g.size();
  std::fclose(f);
  require(ok, ErrorKind::io, "short write: " + path);
}

Grid read_grid(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  require(f != nullptr, ErrorKind::io, "cannot open for read: " + path);
  char magic[4];
  uint32_t rows = 0, cols = 0, ver = 0;
  bool ok = std::fread(magic, 1, 4, f) == 4 && std::fread(&rows, 4, 1, f) == 1 &&
            std::fread(&cols, 4, 1, f) == 1 && std::fread(&ver, 4, 1, f) == 1;
  if (!ok || std::memcmp(magic, kMagic, 4) != 0 || rows == 0 || cols == 0) {
    std::fclose(f);
    fail(ErrorKind::io, "bad grid header: " + path);
  }
  Grid g(static_cast<int>(rows), static_cast<int>(cols));
  ok = std::fread(g.data(), sizeof(double), g.size(), f) == g.size();
  std::fclose(f);
  require(ok, ErrorKind::io, "short read: " + path);
  return g;
}

}  // namespace opcorr

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace opcorr {

// Dense row-major real grid. Used both for images (n x n initial pressure)
// and measurements (n_det x n_t space-time data); operators check shapes at
// their boundaries.
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(static_cast<size_t>(rows) * cols, fill) {
    require(rows > 0 && cols > 0, ErrorKind::input, "grid dims must be positive");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return v_.size(); }

  double& operator()(int r, int c) { return v_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return v_[static_cast<size_t>(r) * cols_ + c]; }
  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& vec() { return v_; }
  const std::vector<double>& vec() const { return v_; }

  bool same_shape(const Grid& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

double norm2(const Grid& g);
double dot(const Grid& a, const Grid& b);
double max_abs(const Grid& g);
double max_val(const Grid& g);
double min_val(const Grid& g);
bool all_finite(const Grid& g);

Grid operator+(const Grid& a, const Grid& b);
Grid operator-(const Grid& a, const Grid& b);
Grid operator*(double s, const Grid& a);

// a += s * b
void axpy(Grid& a, double s, const Grid& b);
// clamp negatives to zero in place
void clip_nonneg(Grid& g);

// relative L2 distance ||a - b|| / ||b||
double rel_l2(const Grid& a, const Grid& b);

// Binary grid format: 16-byte header (magic "OPC1", u32 rows, u32 cols,
// u32 reserved/version), then row-major float64 payload.
void write_grid(const std::string& path, const Grid& g);
Grid read_grid(const std::string& path);

}  // namespace opcorr

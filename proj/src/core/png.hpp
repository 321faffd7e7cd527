#pragma once

#include <string>

#include "core/grid.hpp"

namespace opcorr {

// 8-bit grayscale PNG with per-image min/max normalisation; returns the
// (min, max) used. PNGs are for inspection only, quantitative comparisons
// use the binary grid files.
std::pair<double, double> write_png_gray(const std::string& path, const Grid& g);

}  // namespace opcorr

#pragma once

#include "redsdf/geometry.hpp"

#include <functional>
#include <string>
#include <vector>

namespace redsdf::slice {

/// Axis-aligned slicing plane: 'x', 'y' or 'z' names the fixed axis, the two
/// remaining axes (in xyz order) span the grid.
struct SliceSpec {
  char plane = 'z';
  double offset = 0.0;
  double min_a = -1.0, max_a = 1.0;
  double min_b = -1.0, max_b = 1.0;
  int res_a = 128, res_b = 128;
};

struct SliceGrid {
  SliceSpec spec;
  MatX values;  // res_b rows x res_a cols, row i = b index, col j = a index
  double a_at(int j) const;
  double b_at(int i) const;
  Vec3 point_at(int i, int j) const;
};

SliceGrid eval_slice(const std::function<double(const Vec3&)>& field, const SliceSpec& spec);

void write_slice_csv(const SliceGrid& grid, const std::string& path);

// 8-bit grayscale, binary PGM, values normalized over the grid's range.
void write_slice_pgm(const SliceGrid& grid, const std::string& path);

// Marching-squares crossings of the given level: one point per grid-edge
// crossing, in plane coordinates (a, b).
std::vector<std::pair<double, double>> contour_points(const SliceGrid& grid, double level);

void write_contour_csv(const SliceGrid& grid,
                       const std::vector<std::pair<double, double>>& pts, double level,
                       const std::string& path);

}  // namespace redsdf::slice

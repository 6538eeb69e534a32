#include "redsdf/slice.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace redsdf::slice {

namespace {

void axes_of(char plane, int& ia, int& ib, int& ifix) {
  switch (plane) {
    case 'x':
      ifix = 0, ia = 1, ib = 2;
      return;
    case 'y':
      ifix = 1, ia = 0, ib = 2;
      return;
    case 'z':
      ifix = 2, ia = 0, ib = 1;
      return;
    default:
      throw std::invalid_argument("slice plane must be one of x, y, z");
  }
}

}  // namespace

double SliceGrid::a_at(int j) const {
  if (spec.res_a == 1) return 0.5 * (spec.min_a + spec.max_a);
  return spec.min_a + (spec.max_a - spec.min_a) * j / (spec.res_a - 1);
}

double SliceGrid::b_at(int i) const {
  if (spec.res_b == 1) return 0.5 * (spec.min_b + spec.max_b);
  return spec.min_b + (spec.max_b - spec.min_b) * i / (spec.res_b - 1);
}

Vec3 SliceGrid::point_at(int i, int j) const {
  int ia, ib, ifix;
  axes_of(spec.plane, ia, ib, ifix);
  Vec3 p;
  p[ia] = a_at(j);
  p[ib] = b_at(i);
  p[ifix] = spec.offset;
  return p;
}

SliceGrid eval_slice(const std::function<double(const Vec3&)>& field, const SliceSpec& spec) {
  if (spec.res_a < 1 || spec.res_b < 1) throw std::invalid_argument("slice resolution >= 1");
  if (!(spec.max_a >= spec.min_a) || !(spec.max_b >= spec.min_b)) {
    throw std::invalid_argument("degenerate slice range");
  }
  SliceGrid grid;
  grid.spec = spec;
  grid.values.resize(spec.res_b, spec.res_a);
  for (int i = 0; i < spec.res_b; ++i) {
    for (int j = 0; j < spec.res_a; ++j) {
      grid.values(i, j) = field(grid.point_at(i, j));
    }
  }
  return grid;
}

void write_slice_csv(const SliceGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(9);
  os << "a,b,d\n";
  for (int i = 0; i < grid.spec.res_b; ++i) {
    for (int j = 0; j < grid.spec.res_a; ++j) {
      os << grid.a_at(j) << ',' << grid.b_at(i) << ',' << grid.values(i, j) << '\n';
    }
  }
}

void write_slice_pgm(const SliceGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  const double lo = grid.values.minCoeff();
  const double hi = grid.values.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  os << "P5\n" << grid.spec.res_a << ' ' << grid.spec.res_b << "\n255\n";
  for (int i = 0; i < grid.spec.res_b; ++i) {
    for (int j = 0; j < grid.spec.res_a; ++j) {
      const double v = (grid.values(i, j) - lo) / span;
      const unsigned char byte =
          static_cast<unsigned char>(std::clamp(255.0 * v, 0.0, 255.0));
      os.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
}

std::vector<std::pair<double, double>> contour_points(const SliceGrid& grid, double level) {
  std::vector<std::pair<double, double>> pts;
  const MatX& v = grid.values;
  auto lerp = [&](double f0, double f1, double x0, double x1) {
    const double t = (level - f0) / (f1 - f0);
    return x0 + t * (x1 - x0);
  };
  for (int i = 0; i + 1 < grid.spec.res_b; ++i) {
    for (int j = 0; j + 1 < grid.spec.res_a; ++j) {
      const double f00 = v(i, j), f01 = v(i, j + 1);
      const double f10 = v(i + 1, j), f11 = v(i + 1, j + 1);
      const double a0 = grid.a_at(j), a1 = grid.a_at(j + 1);
      const double b0 = grid.b_at(i), b1 = grid.b_at(i + 1);
      // bottom edge (i, j)-(i, j+1)
      if ((f00 - level) * (f01 - level) < 0) pts.emplace_back(lerp(f00, f01, a0, a1), b0);
      // left edge (i, j)-(i+1, j)
      if ((f00 - level) * (f10 - level) < 0) pts.emplace_back(a0, lerp(f00, f10, b0, b1));
      // rightmost column / top row edges are covered by their own cells
      if (j + 2 == grid.spec.res_a && (f01 - level) * (f11 - level) < 0) {
        pts.emplace_back(a1, lerp(f01, f11, b0, b1));
      }
      if (i + 2 == grid.spec.res_b && (f10 - level) * (f11 - level) < 0) {
        pts.emplace_back(lerp(f10, f11, a0, a1), b1);
      }
    }
  }
  return pts;
}

void write_contour_csv(const SliceGrid& grid,
                       const std::vector<std::pair<double, double>>& pts, double level,
                       const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(9);
  os << "# level," << level << '\n';
  os << "a,b\n";
  (void)grid;
  for (const auto& [a, b] : pts) os << a << ',' << b << '\n';
}

}  // namespace redsdf::slice

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "addiff/rng.hpp"
#include "addiff/tensor.hpp"

namespace addiff::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
};

/// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of `loss` w.r.t. up to `max_coords` entries of `x`
/// (all of them if x is small enough), compared against `analytic`.
inline GradCheck check_gradient(Matrix& x, const Matrix& analytic, const std::function<double()>& loss,
                                int max_coords, NoiseSource& pick, double h = 1e-5,
                                double floor = 1e-7) {
  std::vector<Eigen::Index> coords(x.size());
  std::iota(coords.begin(), coords.end(), Eigen::Index{0});
  if (static_cast<int>(coords.size()) > max_coords) {
    std::shuffle(coords.begin(), coords.end(), pick.engine());
    coords.resize(max_coords);
  }
  GradCheck out;
  for (Eigen::Index i : coords) {
    double& v = x.data()[i];
    const double keep = v;
    v = keep + h;
    const double up = loss();
    v = keep - h;
    const double down = loss();
    v = keep;
    const double numeric = (up - down) / (2.0 * h);
    out.max_rel_error = std::max(out.max_rel_error, rel_error(analytic.data()[i], numeric, floor));
    ++out.checked;
  }
  return out;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, NoiseSource& noise, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * noise.normal();
  return m;
}

}  // namespace addiff::testing

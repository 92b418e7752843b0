#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace ofp {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

// Compares an analytic gradient against central differences
// (f(x+h) - f(x-h)) / 2h, element by element. The relative error of an element
// is |a - n| / max(|a|, |n|, 1), so gradients below unit magnitude are held to
// the same absolute tolerance.
inline GradcheckResult finite_difference_gradcheck(const std::function<double(std::span<const double>)>& f,
                                                   std::vector<double> point, std::span<const double> analytic,
                                                   double h = 1e-6) {
  GradcheckResult r;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    point[i] = x0 + h;
    const double fp = f(point);
    point[i] = x0 - h;
    const double fm = f(point);
    point[i] = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace ofp

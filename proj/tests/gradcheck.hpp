// Central finite differences over every trainable scalar.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "drm/loss.hpp"

namespace drm::testing {

struct GradCheck {
  double max_rel_error = 0.0;  // ‖analytic − numeric‖∞ / max(‖numeric‖∞, 1e-12)
  double max_abs_error = 0.0;
};

inline GradCheck check_gradient(const TrainableParams& at, const TrainableParams& analytic,
                                const std::function<double(const TrainableParams&)>& f, double h = 1e-5) {
  TrainableParams p = at;
  double err = 0.0;
  double scale = 0.0;
  for (std::size_t k = 0; k < p.num_scalars(); ++k) {
    const double x0 = p.scalar(k);
    p.scalar(k) = x0 + h;
    const double up = f(p);
    p.scalar(k) = x0 - h;
    const double down = f(p);
    p.scalar(k) = x0;
    const double numeric = (up - down) / (2 * h);
    err = std::max(err, std::abs(numeric - analytic.scalar(k)));
    scale = std::max(scale, std::abs(numeric));
  }
  return {err / std::max(scale, 1e-12), err};
}

}  // namespace drm::testing

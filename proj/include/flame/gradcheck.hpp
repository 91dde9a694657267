#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flame/nn.hpp"
#include "flame/rng.hpp"

namespace flame {

// A flat view of one array participating in a gradient check: the value
// storage is perturbed in place, the grad storage is read after the
// backward callback has filled it.
struct GradCheckArray {
  std::string name;
  double* data = nullptr;
  const double* grad = nullptr;
  Index size = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_array;
  Index worst_index = -1;
  int coords_checked = 0;
  int kink_retries = 0;
};

inline void collect_arrays(const ParamRefs<double>& params, std::vector<GradCheckArray>& out) {
  for (auto* p : params) {
    if (!p->trainable || p->value.size() == 0) continue;
    out.push_back({p->name, p->value.data(), p->grad.data(), p->value.size()});
  }
}

// Central finite differences (step h) against analytic gradients on a seeded
// random subset of coordinates per array. `forward` returns the scalar loss;
// `backward` must zero grads, run forward+backward, and leave analytic
// gradients in the arrays' grad storage. Relative error uses
// |a - n| / max(|a| + |n|, 1e-3) so near-zero gradients do not amplify
// finite-difference noise. Coordinates that fail are retried once with the
// coordinate jittered off a possible ReLU kink; the better result counts.
inline GradCheckReport finite_difference_check(const std::vector<GradCheckArray>& arrays,
                                               const std::function<double()>& forward,
                                               const std::function<void()>& backward,
                                               std::uint64_t seed, int coords_per_array = 24,
                                               double h = 1e-5) {
  GradCheckReport report;
  Rng rng(splitmix64(seed ^ 0x9d2c5680u));

  auto numeric_at = [&](double* slot) {
    const double saved = *slot;
    *slot = saved + h;
    const double fp = forward();
    *slot = saved - h;
    const double fm = forward();
    *slot = saved;
    return (fp - fm) / (2.0 * h);
  };
  auto rel_error = [](double a, double n) {
    return std::abs(a - n) / std::max(std::abs(a) + std::abs(n), 1e-3);
  };

  backward();
  for (const auto& arr : arrays) {
    const int n_coords = static_cast<int>(std::min<Index>(coords_per_array, arr.size));
    for (int k = 0; k < n_coords; ++k) {
      const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(arr.size)));
      const double analytic = arr.grad[i];
      double rel = rel_error(analytic, numeric_at(arr.data + i));

      if (rel > 1e-4) {
        // Possible non-differentiable point: jitter the coordinate away
        // from the kink and compare there instead.
        ++report.kink_retries;
        const double saved = arr.data[i];
        arr.data[i] = saved + 2.5e-3;
        backward();
        const double rel_jit = rel_error(arr.grad[i], numeric_at(arr.data + i));
        arr.data[i] = saved;
        backward();  // restore analytic grads for the remaining coordinates
        rel = std::min(rel, rel_jit);
      }

      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_array = arr.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace flame

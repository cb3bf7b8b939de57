#pragma once
// Finite-difference verification of the tape. Everything runs in double:
// the analytic gradient comes from one backward sweep, the oracle from
// central differences with eps = 1e-5. The reported number is
//   max over checked coordinates of |analytic - fd| / max(1e-8, |analytic| + |fd|)
// and anything below 1e-4 counts as a pass.

#include <functional>
#include <string>
#include <vector>

#include "bridgenet/tensor.hpp"

namespace bridgenet {

inline constexpr double kGradCheckEps = 1e-5;
inline constexpr double kGradCheckTol = 1e-4;

struct GradCheckOptions {
  double eps = kGradCheckEps;
  // 0 = check every coordinate; otherwise a deterministic subsample per tensor
  int max_coords_per_tensor = 0;
  uint64_t coord_seed = 17;
};

// f maps the checked tensors to a scalar loss. Tensors in xs may be aliased
// by state f captures (module parameters); perturbing them through xs is what
// makes that work.
double grad_check(const std::function<TensorD(std::vector<TensorD>&)>& f,
                  std::vector<TensorD> xs, const GradCheckOptions& opts = {});

// Per-tensor worst relative error, for diagnostics.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;
};
GradCheckReport grad_check_report(const std::function<TensorD(std::vector<TensorD>&)>& f,
                                  std::vector<TensorD> xs,
                                  const std::vector<std::string>& names,
                                  const GradCheckOptions& opts = {});

}  // namespace bridgenet

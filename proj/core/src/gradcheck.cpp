#include "bridgenet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace bridgenet {

namespace {
double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max(1e-8, std::abs(analytic) + std::abs(fd));
}
}  // namespace

GradCheckReport grad_check_report(const std::function<TensorD(std::vector<TensorD>&)>& f,
                                  std::vector<TensorD> xs,
                                  const std::vector<std::string>& names,
                                  const GradCheckOptions& opts) {
  // analytic gradients from one recorded forward + backward
  for (auto& x : xs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    GradTapeD tape;
    TensorD loss = f(xs);
    tape.backward(loss);
    for (auto& x : xs) analytic.push_back(x.grad());
  }

  // oracle: central differences on each checked coordinate, with recording off
  NoGradGuard ng;
  GradCheckReport report;
  Rng pick(opts.coord_seed);
  for (size_t t = 0; t < xs.size(); ++t) {
    auto& vals = xs[t].values();
    const int64_t n = static_cast<int64_t>(vals.size());
    std::vector<int64_t> coords;
    if (opts.max_coords_per_tensor > 0 && n > opts.max_coords_per_tensor) {
      coords.reserve(static_cast<size_t>(opts.max_coords_per_tensor));
      for (int i = 0; i < opts.max_coords_per_tensor; ++i)
        coords.push_back(static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(n)));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    } else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }
    double worst = 0.0;
    for (const int64_t i : coords) {
      const double saved = vals[static_cast<size_t>(i)];
      vals[static_cast<size_t>(i)] = saved + opts.eps;
      const double up = f(xs).item();
      vals[static_cast<size_t>(i)] = saved - opts.eps;
      const double down = f(xs).item();
      vals[static_cast<size_t>(i)] = saved;
      const double fd = (up - down) / (2.0 * opts.eps);
      worst = std::max(worst, rel_err(analytic[t][static_cast<size_t>(i)], fd));
    }
    report.per_tensor.emplace_back(t < names.size() ? names[t] : "x" + std::to_string(t),
                                   worst);
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  return report;
}

double grad_check(const std::function<TensorD(std::vector<TensorD>&)>& f,
                  std::vector<TensorD> xs, const GradCheckOptions& opts) {
  return grad_check_report(f, std::move(xs), {}, opts).max_rel_err;
}

}  // namespace bridgenet

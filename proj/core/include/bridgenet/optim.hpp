// Optimizers (SGD with momentum, Adam, AdamW with decoupled decay) and the
// polynomial learning-rate schedule. An optimizer owns per-parameter state
// tensors shaped like the parameters; the state is plain tensors so it rides
// through checkpoints via the tensor archive.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bridgenet/nn.hpp"
#include "bridgenet/tensor.hpp"

namespace bridgenet {

enum class OptimKind { sgd, adam, adamw };

OptimKind optim_kind_from_string(const std::string& s);  // throws ConfigError
std::string optim_kind_name(OptimKind kind);

struct OptimConfig {
  OptimKind kind = OptimKind::adamw;
  double lr = 1e-3;          // base learning rate
  double weight_decay = 0.05;
  int total_iters = 1000;    // schedule horizon T
  double poly_power = 0.9;
  double momentum = 0.9;     // sgd only
  double beta1 = 0.9;        // adam/adamw
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;  // throws ConfigError
};

// lr(t) = base_lr * (1 - t/T)^p for 0 <= t <= T; throws ValueError outside.
double poly_lr(int step, const OptimConfig& cfg);

// Weight-decay semantics by kind: sgd and adam fold wd*p into the gradient
// (classic coupled L2); adamw subtracts lr*wd*p directly from the parameter
// after the moment update (decoupled), so its decay is invariant to the
// gradient scaling that the second moment applies.
struct Optimizer {
  OptimConfig cfg;
  ParamList<float> params;
  std::vector<TensorF> m;  // first moment / momentum buffer
  std::vector<TensorF> v;  // second moment (adam/adamw only)
  int64_t step_count = 0;

  Optimizer(OptimConfig cfg, ParamList<float> params);

  // One update with the given learning rate. Every parameter must carry a
  // gradient from a backward pass; a missing one throws ValueError.
  void step(double lr);

  void zero_grad();

  // State as archive entries ("optim.m.<name>", "optim.v.<name>",
  // "optim.step"), and the inverse. Loading rejects mismatched names/shapes.
  std::vector<NamedParam<float>> state_tensors() const;
  void load_state(const std::vector<NamedParam<float>>& state);
};

}  // namespace bridgenet

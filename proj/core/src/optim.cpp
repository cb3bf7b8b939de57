#include "bridgenet/optim.hpp"

#include <cmath>
#include <unordered_map>

namespace bridgenet {

OptimKind optim_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimKind::sgd;
  if (s == "adam") return OptimKind::adam;
  if (s == "adamw") return OptimKind::adamw;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd, adam, or adamw)");
}

std::string optim_kind_name(OptimKind kind) {
  switch (kind) {
    case OptimKind::sgd: return "sgd";
    case OptimKind::adam: return "adam";
    case OptimKind::adamw: return "adamw";
  }
  throw ValueError("optim_kind_name: bad enum value");
}

void OptimConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("optim: lr must be positive");
  if (poly_power < 0) throw ConfigError("optim: poly power must be non-negative");
  if (total_iters < 1) throw ConfigError("optim: total_iters must be at least 1");
  if (weight_decay < 0) throw ConfigError("optim: weight_decay must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("optim: momentum must be in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("optim: betas must be in [0, 1)");
}

double poly_lr(int step, const OptimConfig& cfg) {
  cfg.validate();
  if (step < 0 || step > cfg.total_iters)
    throw ValueError("poly_lr: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(cfg.total_iters) + "]");
  const double frac = 1.0 - static_cast<double>(step) / cfg.total_iters;
  return cfg.lr * std::pow(frac, cfg.poly_power);
}

Optimizer::Optimizer(OptimConfig config, ParamList<float> parameters)
    : cfg(config), params(std::move(parameters)) {
  cfg.validate();
  const bool needs_v = cfg.kind != OptimKind::sgd;
  for (const auto& p : params) {
    m.emplace_back(p.tensor.shape(), 0.0f);
    if (needs_v) v.emplace_back(p.tensor.shape(), 0.0f);
  }
}

void Optimizer::step(double lr) {
  ++step_count;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    TensorF& p = params[i].tensor;
    if (!p.has_grad())
      throw ValueError("optimizer step: parameter '" + params[i].name + "' has no gradient");
    auto& val = p.values();
    auto& g = p.grad();
    auto& mi = m[i].values();
    switch (cfg.kind) {
      case OptimKind::sgd:
        for (size_t j = 0; j < val.size(); ++j) {
          const double grad = g[j] + cfg.weight_decay * val[j];
          const double buf = cfg.momentum * mi[j] + grad;
          mi[j] = static_cast<float>(buf);
          val[j] = static_cast<float>(val[j] - lr * buf);
        }
        break;
      case OptimKind::adam:
      case OptimKind::adamw: {
        auto& vi = v[i].values();
        const bool coupled = cfg.kind == OptimKind::adam;
        for (size_t j = 0; j < val.size(); ++j) {
          const double grad = coupled ? g[j] + cfg.weight_decay * val[j] : double(g[j]);
          const double mj = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * grad;
          const double vj = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * grad * grad;
          mi[j] = static_cast<float>(mj);
          vi[j] = static_cast<float>(vj);
          double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
          if (!coupled) update += lr * cfg.weight_decay * val[j];
          val[j] = static_cast<float>(val[j] - update);
        }
        break;
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params) p.tensor.zero_grad();
}

std::vector<NamedParam<float>> Optimizer::state_tensors() const {
  std::vector<NamedParam<float>> out;
  for (size_t i = 0; i < params.size(); ++i) out.push_back({"optim.m." + params[i].name, m[i]});
  for (size_t i = 0; i < v.size(); ++i) out.push_back({"optim.v." + params[i].name, v[i]});
  TensorF step(Shape{1}, static_cast<float>(step_count));
  out.push_back({"optim.step", step});
  return out;
}

void Optimizer::load_state(const std::vector<NamedParam<float>>& state) {
  std::unordered_map<std::string, const TensorF*> by_name;
  for (const auto& s : state) by_name[s.name] = &s.tensor;
  auto take = [&](const std::string& name, TensorF& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("optimizer state: missing '" + name + "'");
    if (it->second->shape() != dst.shape())
      throw ConfigError("optimizer state: shape mismatch for '" + name + "'");
    dst.values() = it->second->values();
    by_name.erase(it);
  };
  for (size_t i = 0; i < params.size(); ++i) take("optim.m." + params[i].name, m[i]);
  for (size_t i = 0; i < v.size(); ++i) take("optim.v." + params[i].name, v[i]);
  auto it = by_name.find("optim.step");
  if (it == by_name.end()) throw ConfigError("optimizer state: missing 'optim.step'");
  step_count = static_cast<int64_t>(it->second->values().at(0));
  by_name.erase(it);
  if (!by_name.empty())
    throw ConfigError("optimizer state: unexpected entry '" + by_name.begin()->first + "'");
}

}  // namespace bridgenet

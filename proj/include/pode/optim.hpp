#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>

#include "pode/autodiff.hpp"

namespace pode {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment updates with per-parameter step counts, so groups added
/// mid-training start their bias correction from scratch.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update from each parameter's accumulated gradient, then
  /// zeroes the gradient.
  void step(std::span<Parameter* const> params, double lr) {
    for (Parameter* p : params) {
      auto [it, fresh] = state_.try_emplace(p->name);
      State& s = it->second;
      if (fresh) {
        s.m = Tensor(p->value.shape(), 0.0);
        s.v = Tensor(p->value.shape(), 0.0);
      }
      ++s.t;
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
      auto g = p->grad.data();
      auto w = p->value.data();
      auto m = s.m.data();
      auto v = s.v.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
      p->zero_grad();
    }
  }

  std::size_t tracked() const { return state_.size(); }

 private:
  struct State {
    Tensor m, v;
    long t = 0;
  };
  AdamConfig cfg_;
  std::map<std::string, State> state_;
};

}  // namespace pode

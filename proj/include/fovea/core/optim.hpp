#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fovea/core/graph.hpp"
#include "fovea/core/tensor.hpp"

namespace fovea {

/// Rectified Adam. While the variance rectification term is undefined
/// (small step counts), the update falls back to the bias-corrected first
/// moment alone.
template <typename S>
class RAdam {
 public:
  struct Config {
    S lr = S(1e-4);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
  };

  explicit RAdam(Config cfg = {}) : cfg_(cfg) {}

  /// One update over all parameters. If any gradient is non-finite the
  /// whole step is rejected: parameters and moments stay untouched and the
  /// rejection counter is bumped.
  bool step(std::vector<ag::Var<S>>& params) {
    if (slots_m_.empty()) {
      for (auto& p : params) {
        slots_m_.emplace_back(p->value.shape());
        slots_v_.emplace_back(p->value.shape());
      }
    }
    if (slots_m_.size() != params.size())
      throw std::logic_error("radam: parameter set changed between steps");
    for (auto& p : params) {
      if (!p->has_grad()) continue;
      if (!p->grad.all_finite()) {
        ++rejected_;
        return false;
      }
    }
    ++t_;
    const S b1t = std::pow(cfg_.beta1, S(t_));
    const S b2t = std::pow(cfg_.beta2, S(t_));
    const S rho_inf = S(2) / (S(1) - cfg_.beta2) - S(1);
    const S rho_t = rho_inf - S(2) * S(t_) * b2t / (S(1) - b2t);
    const bool rectified = rho_t > S(4);
    S rect = S(1);
    if (rectified)
      rect = std::sqrt(((rho_t - S(4)) * (rho_t - S(2)) * rho_inf) /
                       ((rho_inf - S(4)) * (rho_inf - S(2)) * rho_t));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p->has_grad()) continue;
      auto& m = slots_m_[i].array();
      auto& v = slots_v_[i].array();
      const auto& g = p->grad.array();
      m = cfg_.beta1 * m + (S(1) - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (S(1) - cfg_.beta2) * g.square();
      if (rectified) {
        p->value.array() -=
            cfg_.lr * rect * (m / (S(1) - b1t)) / ((v / (S(1) - b2t)).sqrt() + cfg_.eps);
      } else {
        p->value.array() -= cfg_.lr * (m / (S(1) - b1t));
      }
    }
    return true;
  }

  long step_count() const { return t_; }
  long rejected_count() const { return rejected_; }
  const Config& config() const { return cfg_; }
  void set_lr(S lr) { cfg_.lr = lr; }

 private:
  Config cfg_;
  std::vector<Tensor<S>> slots_m_, slots_v_;
  long t_ = 0;
  long rejected_ = 0;
};

}  // namespace fovea

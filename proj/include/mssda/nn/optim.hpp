#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mssda/errors.hpp"
#include "mssda/nn/tensor.hpp"

namespace mssda::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // true: AdamW (p -= lr*wd*p before the moment update); false: L2 term added to the gradient.
  bool decoupled = false;

  static AdamConfig adam(double lr, double weight_decay = 0.0) { return {lr, 0.9, 0.999, 1e-8, weight_decay, false}; }
  static AdamConfig adamw(double lr, double weight_decay = 1e-2) { return {lr, 0.9, 0.999, 1e-8, weight_decay, true}; }
};

/// Bias-corrected Adam / AdamW. Moment buffers are bound to the parameter
/// list given on the first step; later steps must pass the same shapes.
template <std::floating_point T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void step(std::span<Parameter<T>* const> params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) {
      throw StateError("adam: optimizer bound to " + std::to_string(m_.size()) + " parameters, got " +
                       std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->value.size() != m_[i].size()) {
        throw StateError("adam: parameter '" + params[i]->name + "' changed shape");
      }
      if (!params[i]->grad.all_finite()) {
        throw NumericError("adam: non-finite gradient in '" + params[i]->name + "' at step " +
                           std::to_string(t_ + 1));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto value = params[i]->value.data();
      auto grad = params[i]->grad.data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < value.size(); ++k) {
        double p = value[k];
        double g = grad[k];
        if (cfg_.weight_decay != 0.0) {
          if (cfg_.decoupled) {
            p -= cfg_.lr * cfg_.weight_decay * p;
          } else {
            g += cfg_.weight_decay * p;
          }
        }
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        p -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        value[k] = static_cast<T>(p);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace mssda::nn

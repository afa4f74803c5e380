#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advsyn/errors.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

struct AdamConfig {
    double lr = 0.0002;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Per-parameter Adam moments. t counts completed steps for this parameter.
struct AdamState {
    Tensor m;
    Tensor v;
    int64_t t = 0;

    static AdamState init(const std::vector<int>& shape) {
        return AdamState{Tensor::zeros(shape), Tensor::zeros(shape), 0};
    }
};

// One bias-corrected Adam update in place:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2,  t <- t+1
//   param <- param - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg,
                      const std::string& param_name = "") {
    if (!param.same_shape(grad) || !param.same_shape(state.m)) {
        throw ShapeError("adam_step: parameter/gradient/state shapes disagree for '" + param_name +
                         "'");
    }
    if (!(cfg.lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
    if (!grad.all_finite()) {
        throw NumericError("adam_step: non-finite gradient for parameter '" + param_name + "'");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (int64_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

// Keyed Adam states for a set of named parameters, created lazily.
class AdamOptimizer {
  public:
    explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::string& name, Tensor& param, const Tensor& grad) {
        auto it = states_.find(name);
        if (it == states_.end()) {
            it = states_.emplace(name, AdamState::init(param.shape())).first;
        }
        adam_step(param, grad, it->second, cfg_, name);
    }

    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }
    std::map<std::string, AdamState>& states() { return states_; }
    const std::map<std::string, AdamState>& states() const { return states_; }

  private:
    AdamConfig cfg_;
    std::map<std::string, AdamState> states_;
};

}  // namespace advsyn

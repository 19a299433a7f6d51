#pragma once

#include <cmath>
#include <map>
#include <string>

#include "moco/params.hpp"
#include "moco/tensor.hpp"

namespace moco {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moment slots are created lazily per parameter name
/// and always match the parameter shape.
class AdamState {
 public:
  AdamConfig config;

  int64_t step_count() const { return step_; }

  void step(ParamSet& params, const std::map<std::string, Tensor>& grads, double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
      auto git = grads.find(name);
      check(git != grads.end(), ErrorCode::InvalidArgument, "adam: missing gradient for " + name);
      const Tensor& g = git->second;
      check_same_shape(p, g, "adam");
      auto& slot = slots_[name];
      if (slot.m.empty()) {
        slot.m = Tensor::zeros(p.shape());
        slot.v = Tensor::zeros(p.shape());
      }
      check_same_shape(slot.m, p, "adam moment");
      for (int64_t i = 0; i < p.numel(); ++i) {
        slot.m[i] = config.beta1 * slot.m[i] + (1.0 - config.beta1) * g[i];
        slot.v[i] = config.beta2 * slot.v[i] + (1.0 - config.beta2) * g[i] * g[i];
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
      }
    }
  }

  // Serialization access for checkpoints.
  struct Moments {
    Tensor m, v;
  };
  const std::map<std::string, Moments>& slots() const { return slots_; }
  void restore(int64_t step, std::map<std::string, Moments> slots) {
    step_ = step;
    slots_ = std::move(slots);
  }

 private:
  std::map<std::string, Moments> slots_;
  int64_t step_ = 0;
};

inline void adam_step(AdamState& state, ParamSet& params,
                      const std::map<std::string, Tensor>& grads, double lr) {
  state.step(params, grads, lr);
}

}  // namespace moco

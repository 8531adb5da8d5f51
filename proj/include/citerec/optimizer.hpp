#pragma once

#include "citerec/autodiff.hpp"

#include <vector>

namespace citerec::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled: each step also shrinks weights by lr * weight_decay * w.
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  /// Apply one update from the accumulated gradients, then zero them.
  void step();
  void zero_grad();

  [[nodiscard]] long steps_taken() const { return t_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace citerec::nn

#pragma once

#include <vector>

#include "lotnext/autodiff.hpp"

namespace lotnext {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// Adam with decoupled weight decay over every parameter of a store.
class AdamW {
 public:
  AdamW(ad::ParameterStore& params, const AdamWConfig& cfg);

  /// Applies one update from the gradients currently held by the parameters.
  void step();
  long steps() const { return t_; }

 private:
  ad::ParameterStore& params_;
  AdamWConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ad::ParameterStore& params, double max_norm);

}  // namespace lotnext

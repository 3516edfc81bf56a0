#pragma once

#include <vector>

#include "stablegnn/tape.hpp"
#include "stablegnn/tensor.hpp"

namespace stablegnn::ad {

struct AdamConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2, added to the gradient
};

// Adam with bias correction. Moments and the step counter are per parameter;
// frozen parameters and parameters without a gradient are skipped entirely,
// leaving their values and moments untouched.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  // Pulls each registered parameter's accumulated gradient off the tape.
  void step(const Tape& tape);

  // Low-level form: grads[i] may be null (parameter skipped).
  void step_with(const std::vector<const Tensor*>& grads);

  const AdamConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  struct Slot {
    Tensor m, v;
    long t = 0;
  };
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  AdamConfig cfg_;
};

}  // namespace stablegnn::ad

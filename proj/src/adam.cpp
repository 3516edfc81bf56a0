#include "stablegnn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace stablegnn::ad {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  slots_.reserve(params_.size());
  for (const Parameter* p : params_) {
    slots_.push_back(Slot{Tensor::zeros_like(p->value), Tensor::zeros_like(p->value), 0});
  }
}

void Adam::step(const Tape& tape) {
  std::vector<const Tensor*> grads;
  grads.reserve(params_.size());
  for (const Parameter* p : params_) grads.push_back(tape.grad_of(*p));
  step_with(grads);
}

void Adam::step_with(const std::vector<const Tensor*>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("adam: gradient list does not match parameter list");
  }
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    const Tensor* g = grads[pi];
    if (!p.requires_grad || g == nullptr) continue;
    if (!g->same_shape(p.value)) {
      throw std::invalid_argument("adam: gradient shape " + g->shape_str() +
                                  " does not match parameter " + p.value.shape_str());
    }
    Slot& slot = slots_[pi];
    slot.t += 1;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
    for (long i = 0; i < p.value.numel(); ++i) {
      double gi = (*g)[i] + cfg_.weight_decay * p.value[i];
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * gi;
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace stablegnn::ad

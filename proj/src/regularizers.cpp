#include "stablegnn/regularizers.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace stablegnn {

using ad::Tape;
using ad::Value;

Value local_regularizer(Tape& t, const std::vector<Value>& alpha0, const CachedAlphas& cached) {
  if (cached.empty() || alpha0.empty()) return t.constant(Tensor::scalar(0.0), "local_reg");
  Value acc;
  long edges = t.val(alpha0[0]).numel();
  for (const auto& env_alphas : cached) {
    if (env_alphas.size() != alpha0.size()) {
      throw std::invalid_argument("local_regularizer: cached layer count mismatch");
    }
    for (size_t l = 0; l < alpha0.size(); ++l) {
      if (env_alphas[l].numel() != t.val(alpha0[l]).numel()) {
        throw std::invalid_argument("local_regularizer: environments do not share the edge set");
      }
      Value diff = t.sub(alpha0[l], t.constant(env_alphas[l], "cached_alpha"));
      Value term = t.sum(t.mul(diff, diff));
      acc = acc.valid() ? t.add(acc, term) : term;
    }
  }
  double norm = static_cast<double>(edges) * static_cast<double>(cached.size()) *
                static_cast<double>(alpha0.size());
  return t.scale(acc, 1.0 / norm);
}

std::vector<Value> env_subloss(Tape& t, Value per_node_losses,
                               const std::vector<Mask>& labeled_masks) {
  std::vector<Value> out;
  out.reserve(labeled_masks.size());
  for (const auto& mask : labeled_masks) {
    bool any = false;
    for (auto m : mask) {
      if (m) {
        any = true;
        break;
      }
    }
    if (!any) throw std::invalid_argument("env_subloss: environment has an empty labeled set");
    out.push_back(t.masked_mean(per_node_losses, mask));
  }
  return out;
}

Value global_regularizer(Tape& t, const std::vector<Value>& sublosses) {
  if (sublosses.size() < 2) {
    std::fprintf(stderr, "warning: global regularizer needs >= 2 environments, got %zu\n",
                 sublosses.size());
    return t.constant(Tensor::scalar(0.0), "global_reg");
  }
  Value acc;
  for (size_t e = 0; e < sublosses.size(); ++e) {
    for (size_t f = e + 1; f < sublosses.size(); ++f) {
      Value d = t.sub(sublosses[e], sublosses[f]);
      Value sq = t.mul(d, d);
      acc = acc.valid() ? t.add(acc, sq) : sq;
    }
  }
  return acc;
}

Value combined_loss(Tape& t, Value pred, Value local, Value global, double lambda0,
                    double lambda1, LossBreakdown* breakdown) {
  double pv = t.val(pred)[0];
  double lv = local.valid() ? t.val(local)[0] : 0.0;
  double gv = global.valid() ? t.val(global)[0] : 0.0;
  if (!std::isfinite(pv) || !std::isfinite(lv) || !std::isfinite(gv)) {
    throw std::runtime_error("combined loss diverged: pred=" + std::to_string(pv) +
                             " local=" + std::to_string(lv) + " global=" + std::to_string(gv));
  }
  if (breakdown) {
    breakdown->pred = pv;
    breakdown->local = lv;
    breakdown->global = gv;
  }
  Value total = pred;
  if (local.valid() && lambda0 != 0.0) total = t.add(total, t.scale(local, lambda0));
  if (global.valid() && lambda1 != 0.0) total = t.add(total, t.scale(global, lambda1));
  return total;
}

}  // namespace stablegnn

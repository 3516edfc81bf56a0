#pragma once

#include <vector>

#include "stablegnn/environments.hpp"
#include "stablegnn/tape.hpp"

namespace stablegnn {

struct LossBreakdown {
  double pred = 0.0;
  double local = 0.0;
  double global = 0.0;
  std::vector<double> sublosses;  // one per environment, env 0 first

  double total(double lambda0, double lambda1) const {
    return pred + lambda0 * local + lambda1 * global;
  }
};

// Cached edge weights from the generated environments: [env-1][layer] -> [E].
// Values only; they entered the tape via constants so no gradient reaches the
// predictors that produced them.
using CachedAlphas = std::vector<std::vector<Tensor>>;

// Sum over layers, edges, and generated environments of the squared gap
// between the observational weights and the cached ones, normalized by
// (edges * environments * layers) so lambda0 is scale-free.
ad::Value local_regularizer(ad::Tape& t, const std::vector<ad::Value>& alpha0,
                            const CachedAlphas& cached);

// Mean of the environment-0 per-node losses restricted to each environment's
// labeled set.
std::vector<ad::Value> env_subloss(ad::Tape& t, ad::Value per_node_losses,
                                   const std::vector<Mask>& labeled_masks);

// Sum of squared gaps over unordered environment pairs. Equals
// |E| * sum_e (L_e - mean)^2. With fewer than two environments the gap is
// vacuous: returns constant 0 and warns.
ad::Value global_regularizer(ad::Tape& t, const std::vector<ad::Value>& sublosses);

// pred + lambda0 * local + lambda1 * global. Zero-weighted or invalid terms
// are skipped; non-finite components abort.
ad::Value combined_loss(ad::Tape& t, ad::Value pred, ad::Value local, ad::Value global,
                        double lambda0, double lambda1, LossBreakdown* breakdown = nullptr);

}  // namespace stablegnn

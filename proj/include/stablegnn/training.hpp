#pragma once

#include <cstdint>
#include <vector>

#include "stablegnn/adam.hpp"
#include "stablegnn/environments.hpp"
#include "stablegnn/graph.hpp"
#include "stablegnn/layers.hpp"
#include "stablegnn/regularizers.hpp"

namespace stablegnn {

// One configuration drives node classification and recommendation; fields
// that do not apply to a task are ignored by it.
struct TrainConfig {
  double lambda0 = 1.0;
  double lambda1 = 1.0;
  double lr = 0.005;        // outer step (backbone + observational predictor)
  double inner_lr = 0.005;  // generated-environment predictor steps
  double weight_decay = 0.0;
  int epochs = 200;
  int inner_steps = 1;
  int num_generated_envs = 2;  // K
  std::uint64_t seed = 0;
  WeightMode weight_mode = WeightMode::SoftmaxAttention;

  // Node classification.
  std::vector<int> hidden = {16};
  double input_dropout = 0.0;
  double feature_dropout = 0.0;

  // Recommendation.
  int embedding_dim = 64;
  int rec_layers = 3;
  bool concat_layer_outputs = true;

  ad::AdamConfig adam(double rate) const {
    return ad::AdamConfig{rate, 0.9, 0.999, 1e-8, weight_decay};
  }
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown losses;
};

struct NodeTrainResult {
  NodeModel model;
  std::vector<EpochLog> log;
};

// Algorithm: per epoch, (a) freeze the backbone and take `inner_steps`
// optimizer steps on each generated environment's predictor against that
// environment's task loss, then cache its detached edge weights; (b) unfreeze
// the backbone and take one step on (backbone, observational predictor)
// against pred + lambda0*local + lambda1*global.
NodeTrainResult train_stable(const Graph& g, const PropGraph& pg, const EnvironmentSet& envs,
                             const TrainConfig& cfg);

// Single-environment cross-entropy training (two-layer GCN or GAT).
NodeTrainResult train_baseline(const Graph& g, const PropGraph& pg, const Mask& train_mask,
                               const TrainConfig& cfg, ModelKind kind);

// Eval-mode forward with the observational predictor; returns the logits.
Tensor predict_logits(const PropGraph& pg, const Tensor& features, NodeModel& model, int env = 0);

}  // namespace stablegnn

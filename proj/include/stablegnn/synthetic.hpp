#pragma once

#include <cstdint>

#include "stablegnn/graph.hpp"

namespace stablegnn {

// Stochastic-block-model node-classification graph: classes in contiguous
// blocks, denser intra-class edges, Gaussian features around a per-class mean
// of norm `class_signal`, and categorical attributes correlated with the
// class so attribute-biased selection shifts the label marginal.
struct SyntheticSpec {
  int num_nodes = 2000;
  int num_classes = 2;
  int feature_dim = 128;
  double intra_edge_prob = 0.02;
  double inter_edge_prob = 0.002;
  double class_signal = 1.0;
  std::uint64_t seed = 0;
};

Graph generate_synthetic(const SyntheticSpec& spec);

// User-item interaction log over one training day (env 0) and `eval_days`
// following days. Users belong to one of two latent taste groups; gender and
// age-group attributes correlate with the group. Each user draws a personal
// preference pool from their group's item cluster and interacts only within
// it, so a user's embedding quality depends on how much of their own history
// is observed. Training-day interactions are retained with probability
// `train_bias_tau` for the privileged attribute group and 1-tau otherwise,
// so the observed log under-represents one group.
struct SyntheticRecSpec {
  int num_users = 500;
  int num_items = 800;
  int interactions_per_user = 12;
  int eval_interactions_per_user = 10;
  int eval_days = 2;
  int preference_pool_size = 25;
  double cross_cluster_prob = 0.15;
  std::string bias_attr = "gender";
  std::string privileged_value = "M";
  double train_bias_tau = 0.6;
  std::uint64_t seed = 0;
};

BipartiteGraph generate_synthetic_bipartite(const SyntheticRecSpec& spec);

}  // namespace stablegnn

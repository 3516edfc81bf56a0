#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stablegnn/graph.hpp"
#include "stablegnn/rng.hpp"
#include "stablegnn/tape.hpp"

namespace stablegnn {

// Self-loop-augmented propagation structure. Every node gets exactly one
// self-loop so isolated nodes still produce a well-defined neighborhood.
// Edge k targets `targets[k]` and draws from `sources[k]`; edges are grouped
// by target via `offsets`.
struct PropGraph {
  int num_nodes = 0;
  std::vector<int> offsets;  // length N+1
  std::vector<int> sources;
  std::vector<int> targets;

  long num_edges() const { return static_cast<long>(sources.size()); }
  // Kipf-Welling symmetric normalization 1/sqrt(deg_i * deg_j) per edge,
  // degrees counted on the self-looped graph.
  std::vector<double> gcn_coeffs() const;
};

PropGraph make_prop_graph(const Graph& g);

enum class WeightMode { SoftmaxAttention, SigmoidAbsolute };

WeightMode weight_mode_from_string(const std::string& s);
std::string to_string(WeightMode m);

// Environment-shared transform matrices, one per layer (the final layer acts
// as the classifier).
struct BackboneParams {
  std::vector<ad::Parameter> weights;

  void set_frozen(bool frozen);
  std::vector<ad::Parameter*> params();
};

// Per-environment edge-weight predictor: one vector a_l of size 2*F_out per
// layer. Parameters are disjoint from the backbone.
struct WeightPredictor {
  int env = 0;
  WeightMode mode = WeightMode::SoftmaxAttention;
  std::vector<ad::Parameter> attn;

  std::vector<ad::Parameter*> params();
};

// Per-edge importance weights. Softmax mode: exp(LeakyReLU(a.[h_i || h_j]))
// normalized over each target's neighborhood. Sigmoid mode: per-edge
// sigmoid(a.[h_i || h_j]) with no normalization.
ad::Value attention_edge_weights(ad::Tape& t, ad::Value h, const PropGraph& pg, ad::Value a);
ad::Value sigmoid_edge_weights(ad::Tape& t, ad::Value h, const PropGraph& pg, ad::Value a);
ad::Value edge_weights(ad::Tape& t, WeightMode mode, ad::Value h, const PropGraph& pg, ad::Value a);

// x'_i = sum_{j in N_i} alpha_ij * h_j, optionally followed by ELU.
ad::Value weighted_aggregate(ad::Tape& t, ad::Value h, const PropGraph& pg, ad::Value alpha,
                             bool apply_elu = false);

// One GCN layer: ELU(S h W) with S the symmetric-normalized self-looped
// adjacency; the final layer emits raw logits.
ad::Value gcn_layer(ad::Tape& t, ad::Value h, const PropGraph& pg, ad::Value w, bool final_layer);

enum class ModelKind { Stable, Gat, Gcn };

// Node-classification model: a backbone plus one weight predictor per
// environment (none for GCN).
struct NodeModel {
  ModelKind kind = ModelKind::Stable;
  WeightMode mode = WeightMode::SoftmaxAttention;
  std::vector<int> dims;  // feature_dim, hidden..., num_classes
  double input_dropout = 0.0;
  double feature_dropout = 0.0;
  BackboneParams backbone;
  std::vector<WeightPredictor> predictors;

  int num_layers() const { return static_cast<int>(dims.size()) - 1; }
  std::vector<ad::Parameter*> all_params();
};

// Glorot-uniform initialization; parameter order is fixed (backbone layers,
// then predictors by environment) so equal seeds give equal models.
NodeModel init_node_model(ModelKind kind, WeightMode mode, std::vector<int> dims,
                          int num_environments, double input_dropout, double feature_dropout,
                          std::uint64_t seed);

struct BackboneForward {
  ad::Value logits;
  std::vector<ad::Value> alphas;  // per layer; empty for GCN
};

// Input dropout, then per layer: transform, edge weights from the
// environment's predictor, weighted aggregation (ELU except on the final
// layer), feature dropout between layers.
BackboneForward forward_backbone(ad::Tape& t, const PropGraph& pg, const Tensor& features,
                                 NodeModel& model, int env, bool training, Rng* dropout_rng);

}  // namespace stablegnn

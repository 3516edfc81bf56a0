#pragma once

#include <cstdint>
#include <vector>

#include "stablegnn/environments.hpp"
#include "stablegnn/graph.hpp"
#include "stablegnn/training.hpp"

namespace stablegnn {

// Stable graph recommender: a joint user/item embedding table propagated over
// the bipartite interaction graph, with per-environment sigmoid interaction
// weights computed once from the layer-0 embeddings and shared by all layers.
struct RecModel {
  int num_users = 0;
  int num_items = 0;
  int dim = 0;
  int layers = 0;
  bool concat_layer_outputs = true;
  double leaky_slope = 0.2;

  ad::Parameter embeddings;           // [(U+I) x d], users first
  std::vector<ad::Parameter> w1, w2;  // [d x d] per layer
  std::vector<ad::Parameter> attn;    // a^e: [2d] per environment

  std::vector<ad::Parameter*> backbone_params();
  std::vector<ad::Parameter*> all_params();
  void set_backbone_frozen(bool frozen);
};

RecModel init_rec_model(int num_users, int num_items, int dim, int layers, int num_environments,
                        bool concat_layer_outputs, std::uint64_t seed);

// Directed propagation structure over U+I combined nodes: each interaction
// contributes one user<-item and one item<-user edge, both mapped back to the
// interaction id so they share its weight and normalizer 1/sqrt(|N_u||N_i|).
struct RecProp {
  int num_nodes = 0;
  std::vector<int> offsets;       // length U+I+1, target-major
  std::vector<int> dir_sources;   // combined-node source per directed edge
  std::vector<int> dir_targets;
  std::vector<int> dir_edge_ids;  // interaction id per directed edge
  std::vector<double> dir_coeffs;
};

RecProp make_rec_prop(const BipartiteAdj& adj);

// alpha_ui = sigmoid(a_e . [e_u0 || e_i0]) per interaction, from the layer-0
// embedding table.
ad::Value rec_edge_weights(ad::Tape& t, RecModel& model, const BipartiteAdj& adj, int env);

struct RecForward {
  ad::Value final_emb;  // [(U+I) x D], D = d*(layers+1) when concatenating
  ad::Value alpha;      // per-interaction weights used
};

// e^(k+1) = LeakyReLU(W1 e^(k) + sum over neighbors of
//   alpha/sqrt(|N_u||N_i|) * (W1 e_nbr^(k) + W2 (e_nbr^(k) . e_self^(k)))).
RecForward propagate_bipartite(ad::Tape& t, RecModel& model, const BipartiteAdj& adj,
                               const RecProp& prop, ad::Value alpha);

struct BprLoss {
  ad::Value scalar;
  ad::Value per_interaction;  // [B]
};

// -log sigmoid(score(u,pos) - score(u,neg)), scores are dot products of the
// final embeddings. Item ids are catalog ids (the item offset is added here).
BprLoss bpr_loss(ad::Tape& t, ad::Value final_emb, int num_users,
                 const std::vector<int>& users, const std::vector<int>& pos_items,
                 const std::vector<int>& neg_items);

// One uniformly sampled negative per positive, rejecting the user's training
// positives.
std::vector<int> sample_negatives(const BipartiteAdj& adj, Rng& rng);

struct RankingResult {
  std::vector<std::vector<int>> topn;      // per user, score-descending
  std::vector<std::vector<int>> relevant;  // per user, sorted unique item ids
};

// Scores every catalog item per user, excludes training interactions, breaks
// score ties by lower item id.
RankingResult recommend_topn(const Tensor& user_emb, const Tensor& item_emb,
                             const std::vector<std::vector<int>>& exclude_train, int n);

// User environments for the recommender; interactions inherit their user's
// memberships.
EnvironmentSet build_user_environments(const BipartiteGraph& b, const BiasSpec& spec,
                                       int num_generated, std::uint64_t seed);

struct RecTrainResult {
  RecModel model;
  std::vector<EpochLog> log;
};

// Algorithm specialized to BPR: inner phase fits a^e per environment with the
// backbone (embeddings, W1, W2) frozen; outer phase steps the backbone and
// a^0 against pred + lambda0*local + lambda1*global.
RecTrainResult train_stable_recommender(const BipartiteAdj& adj, const EnvironmentSet& user_envs,
                                        const TrainConfig& cfg);

// NGCF-style baseline: identical propagation trained on plain BPR.
RecTrainResult train_baseline_recommender(const BipartiteAdj& adj, const TrainConfig& cfg);

// Eval-mode embeddings with the observational weights: [U x D] and [I x D].
std::pair<Tensor, Tensor> rec_final_embeddings(RecModel& model, const BipartiteAdj& adj,
                                               const RecProp& prop, int env = 0);

}  // namespace stablegnn

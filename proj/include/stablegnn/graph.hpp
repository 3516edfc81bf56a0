#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stablegnn/tensor.hpp"

namespace stablegnn {

// Undirected graph in CSR form with node features, labels, and optional
// categorical attribute columns. Adjacency is stored symmetrically; the CSR is
// immutable after construction and safe to share across runs.
struct Graph {
  int num_nodes = 0;
  int num_classes = 0;
  std::vector<int> csr_offsets;    // length num_nodes+1
  std::vector<int> csr_neighbors;  // sorted within each row
  Tensor features;                 // [N x F]
  std::vector<int> labels;         // [N], values in [0, num_classes)
  std::map<std::string, std::vector<std::string>> attributes;

  int feature_dim() const { return features.rank() == 2 ? features.shape()[1] : 0; }
  int degree(int i) const { return csr_offsets[i + 1] - csr_offsets[i]; }
  long num_edges() const { return static_cast<long>(csr_neighbors.size()); }

  const std::vector<std::string>& attribute(const std::string& name) const;
};

// Builds a Graph from an edge list: symmetrizes, deduplicates (self-loops
// collapse to a single entry), and validates ids and sizes.
Graph make_graph(int num_nodes, const std::vector<std::pair<int, int>>& edges, Tensor features,
                 std::vector<int> labels,
                 std::map<std::string, std::vector<std::string>> attributes = {});

// File ingestion per the documented formats. Parse failures report the file
// and 1-based line number.
Graph load_graph(const std::string& edges_path, const std::string& features_path,
                 const std::string& labels_path, const std::string& attrs_path = "");

// Writers for the same formats (used by the synthetic pipeline and tests).
void save_graph(const Graph& g, const std::string& edges_path, const std::string& features_path,
                const std::string& labels_path, const std::string& attrs_path = "");

// User-item interaction graph. Interactions carry an environment tag (the day
// they were logged); CSR views cover the full interaction multiset.
struct BipartiteGraph {
  struct Interaction {
    int user;
    int item;
    int env;
  };

  int num_users = 0;
  int num_items = 0;
  std::vector<Interaction> interactions;
  std::vector<int> env_tags;  // distinct, sorted
  std::map<std::string, std::vector<std::string>> user_attributes;

  // CSR views over all interactions, built by finalize().
  std::vector<int> user_offsets, user_items;
  std::vector<int> item_offsets, item_users;

  void finalize();  // sorts tags, rebuilds CSR views
  std::vector<Interaction> interactions_in_env(int env_tag) const;
  const std::vector<std::string>& attribute(const std::string& name) const;
};

BipartiteGraph load_interactions(const std::string& path);
void save_interactions(const BipartiteGraph& b, const std::string& path);

// Deduplicated adjacency of one environment's interactions, used for
// propagation. Edges are sorted (user, item); any zero-degree user or item is
// an error because the propagation normalizer divides by both degrees.
struct BipartiteAdj {
  int num_users = 0;
  int num_items = 0;
  std::vector<std::pair<int, int>> edges;  // unique (user, item)
  std::vector<int> user_offsets, user_edge_ids;  // edge ids per user
  std::vector<int> item_offsets, item_edge_ids;  // edge ids per item
  std::vector<int> user_degree, item_degree;
};

BipartiteAdj build_bipartite_adj(const BipartiteGraph& b, int env_tag);

}  // namespace stablegnn

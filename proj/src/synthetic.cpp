#include "stablegnn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "stablegnn/rng.hpp"

namespace stablegnn {

Graph generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 1 || spec.num_nodes < 1) {
    throw std::invalid_argument("generate_synthetic: need at least one node and class");
  }
  if (spec.intra_edge_prob < 0 || spec.intra_edge_prob > 1 || spec.inter_edge_prob < 0 ||
      spec.inter_edge_prob > 1) {
    throw std::invalid_argument("generate_synthetic: edge probabilities must be in [0,1]");
  }
  Rng rng(Rng::derive(spec.seed, rng_stream::kSynthetic));
  int n = spec.num_nodes, c = spec.num_classes, f = spec.feature_dim;

  // Contiguous class blocks of (nearly) equal size.
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = static_cast<int>(static_cast<long>(i) * c / n);

  // Class means scaled to ||mu|| = class_signal; zero signal means the
  // features carry no class information.
  std::vector<std::vector<double>> means(c, std::vector<double>(f, 0.0));
  for (int k = 0; k < c; ++k) {
    double norm2 = 0.0;
    for (int j = 0; j < f; ++j) {
      means[k][j] = rng.normal();
      norm2 += means[k][j] * means[k][j];
    }
    double norm = std::sqrt(norm2);
    double s = (norm > 0 && spec.class_signal > 0) ? spec.class_signal / norm : 0.0;
    for (int j = 0; j < f; ++j) means[k][j] *= s;
  }

  Tensor features = Tensor::zeros({n, f});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < f; ++j) features.at(i, j) = means[labels[i]][j] + rng.normal();
  }

  // Attributes correlate with the class block so attribute bias also shifts
  // the label marginal.
  std::vector<std::string> age(n), gender(n);
  for (int i = 0; i < n; ++i) {
    bool low = labels[i] < (c + 1) / 2;
    age[i] = rng.bernoulli(low ? 0.8 : 0.2) ? "1-25" : "26+";
    gender[i] = rng.bernoulli(low ? 0.7 : 0.3) ? "M" : "F";
  }

  std::vector<std::pair<int, int>> edges;
  if (spec.intra_edge_prob > 0 || spec.inter_edge_prob > 0) {
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        double p = labels[i] == labels[j] ? spec.intra_edge_prob : spec.inter_edge_prob;
        if (p > 0 && rng.bernoulli(p)) edges.emplace_back(i, j);
      }
    }
  }

  std::map<std::string, std::vector<std::string>> attrs;
  attrs["age_group"] = std::move(age);
  attrs["gender"] = std::move(gender);
  Graph g = make_graph(n, edges, std::move(features), std::move(labels), std::move(attrs));
  g.num_classes = c;  // keep declared count even if a class block is empty
  return g;
}

BipartiteGraph generate_synthetic_bipartite(const SyntheticRecSpec& spec) {
  if (spec.num_users < 1 || spec.num_items < 2) {
    throw std::invalid_argument("generate_synthetic_bipartite: too few users or items");
  }
  Rng rng(Rng::derive(spec.seed, rng_stream::kSynthetic, 17));
  int u_count = spec.num_users, i_count = spec.num_items;

  // Latent taste group; attributes correlate with it.
  std::vector<int> group(u_count);
  std::vector<std::string> gender(u_count), age(u_count);
  for (int u = 0; u < u_count; ++u) {
    group[u] = rng.bernoulli(0.5) ? 1 : 0;
    gender[u] = rng.bernoulli(group[u] == 0 ? 0.85 : 0.15) ? "M" : "F";
    age[u] = rng.bernoulli(group[u] == 0 ? 0.75 : 0.25) ? "1-25" : "26+";
  }

  // Items split into two cluster catalogs; within a cluster interest decays
  // with the item index so embeddings have popularity structure to learn.
  int half = i_count / 2;
  auto sample_cluster_item = [&](int g) {
    int cluster = rng.bernoulli(spec.cross_cluster_prob) ? 1 - g : g;
    int lo = cluster == 0 ? 0 : half;
    int hi = cluster == 0 ? half : i_count;
    int span = hi - lo;
    // Soft popularity: pick two uniform candidates, keep the smaller index.
    int a = lo + static_cast<int>(rng.below(span));
    int b = lo + static_cast<int>(rng.below(span));
    return std::min(a, b);
  };

  const std::vector<std::string>& bias_col = spec.bias_attr == "age_group" ? age : gender;

  BipartiteGraph b;
  b.num_users = u_count;
  b.num_items = i_count;
  b.user_attributes["gender"] = gender;
  b.user_attributes["age_group"] = age;

  int pool_size = std::min(spec.preference_pool_size, i_count);
  for (int u = 0; u < u_count; ++u) {
    // Personal taste: all of this user's interactions come from their pool.
    std::set<int> pool;
    while (static_cast<int>(pool.size()) < pool_size) pool.insert(sample_cluster_item(group[u]));
    std::vector<int> pool_items(pool.begin(), pool.end());
    auto sample_item = [&] {
      return pool_items[rng.below(pool_items.size())];
    };

    bool privileged = bias_col[u] == spec.privileged_value;
    double keep = privileged ? spec.train_bias_tau : 1.0 - spec.train_bias_tau;
    std::vector<int> kept;
    std::vector<int> drawn;
    for (int t = 0; t < spec.interactions_per_user; ++t) {
      int item = sample_item();
      drawn.push_back(item);
      if (rng.bernoulli(keep)) kept.push_back(item);
    }
    if (kept.empty()) kept.push_back(drawn.front());  // no cold-start users
    for (int item : kept) b.interactions.push_back({u, item, 0});
    for (int d = 1; d <= spec.eval_days; ++d) {
      for (int t = 0; t < spec.eval_interactions_per_user; ++t) {
        b.interactions.push_back({u, sample_item(), d});
      }
    }
  }

  // Items never seen on the training day cannot be propagated or recommended;
  // drop them everywhere and densify ids.
  std::vector<char> seen(i_count, 0);
  for (const auto& it : b.interactions) {
    if (it.env == 0) seen[it.item] = 1;
  }
  std::vector<int> remap(i_count, -1);
  int next = 0;
  for (int i = 0; i < i_count; ++i) {
    if (seen[i]) remap[i] = next++;
  }
  std::vector<BipartiteGraph::Interaction> filtered;
  filtered.reserve(b.interactions.size());
  for (const auto& it : b.interactions) {
    if (remap[it.item] >= 0) filtered.push_back({it.user, remap[it.item], it.env});
  }
  b.interactions = std::move(filtered);
  b.num_items = next;
  b.finalize();
  return b;
}

}  // namespace stablegnn

#include "stablegnn/environments.hpp"

#include <algorithm>
#include <stdexcept>

#include "stablegnn/rng.hpp"

namespace stablegnn {

namespace {

void check_tau(double tau) {
  if (tau < 0.0 || tau > 1.0) {
    throw std::invalid_argument("bias ratio tau must be in [0,1], got " + std::to_string(tau));
  }
}

Mask select_by_flag(int num_nodes, const std::vector<int>& candidates,
                    const std::vector<char>& favored, double tau, std::uint64_t seed) {
  check_tau(tau);
  Rng rng(seed);
  Mask mask(num_nodes, 0);
  for (int node : candidates) {
    double p = favored[node] ? tau : 1.0 - tau;
    if (rng.bernoulli(p)) mask[node] = 1;
  }
  return mask;
}

}  // namespace

int median_label(const Graph& g) {
  std::vector<int> sorted = g.labels;
  std::sort(sorted.begin(), sorted.end());
  return sorted[sorted.size() / 2];
}

Mask biased_select_by_label(const Graph& g, const std::vector<int>& candidates, int threshold,
                            double tau, std::uint64_t seed) {
  std::vector<char> favored(g.num_nodes, 0);
  for (int i = 0; i < g.num_nodes; ++i) favored[i] = g.labels[i] >= threshold;
  return select_by_flag(g.num_nodes, candidates, favored, tau, seed);
}

Mask biased_select_by_attribute(const std::vector<std::string>& column, int num_nodes,
                                const std::vector<int>& candidates,
                                const std::string& privileged_value, double tau,
                                std::uint64_t seed) {
  if (static_cast<int>(column.size()) != num_nodes) {
    throw std::invalid_argument("attribute column length does not match node count");
  }
  std::vector<char> favored(num_nodes, 0);
  for (int i = 0; i < num_nodes; ++i) favored[i] = column[i] == privileged_value;
  return select_by_flag(num_nodes, candidates, favored, tau, seed);
}

Mask biased_select_by_attribute(const Graph& g, const std::vector<int>& candidates,
                                const std::string& attr_name, const std::string& privileged_value,
                                double tau, std::uint64_t seed) {
  return biased_select_by_attribute(g.attribute(attr_name), g.num_nodes, candidates,
                                    privileged_value, tau, seed);
}

Mask biased_select_by_attribute(const BipartiteGraph& b, const std::vector<int>& candidate_users,
                                const std::string& attr_name, const std::string& privileged_value,
                                double tau, std::uint64_t seed) {
  return biased_select_by_attribute(b.attribute(attr_name), b.num_users, candidate_users,
                                    privileged_value, tau, seed);
}

Mask biased_select(const Graph& g, const std::vector<int>& candidates, const BiasSpec& spec,
                   double tau, std::uint64_t seed) {
  if (spec.factor == BiasSpec::Factor::LabelThreshold) {
    int t = spec.label_threshold >= 0 ? spec.label_threshold : median_label(g);
    return biased_select_by_label(g, candidates, t, tau, seed);
  }
  return biased_select_by_attribute(g, candidates, spec.attr_name, spec.privileged_value, tau,
                                    seed);
}

EnvironmentSet build_environments(const Graph& g, const std::vector<int>& train_nodes,
                                  const BiasSpec& spec, int num_generated, std::uint64_t seed) {
  if (num_generated < 0) throw std::invalid_argument("build_environments: negative K");
  check_tau(spec.tau);
  if (train_nodes.empty()) throw std::invalid_argument("build_environments: no training nodes");

  EnvironmentSet env;
  env.num_nodes = g.num_nodes;
  Mask obs(g.num_nodes, 0);
  for (int node : train_nodes) obs[node] = 1;
  env.masks.push_back(std::move(obs));
  env.labeled.push_back(train_nodes);
  std::sort(env.labeled[0].begin(), env.labeled[0].end());

  for (int k = 1; k <= num_generated; ++k) {
    // Alternate the bias direction so generated distributions differ.
    double tau_k = (k % 2 == 1) ? spec.tau : 1.0 - spec.tau;
    Mask m = biased_select(g, train_nodes, spec, tau_k,
                           Rng::derive(seed, rng_stream::kSelection, k));
    auto idx = mask_to_indices(m);
    if (idx.empty()) {
      throw std::runtime_error("environment " + std::to_string(k) + " has zero labeled nodes");
    }
    env.masks.push_back(std::move(m));
    env.labeled.push_back(std::move(idx));
  }
  return env;
}

std::vector<Mask> make_test_environments(const Graph& g, const std::vector<int>& test_nodes,
                                         const BiasSpec& spec, const std::vector<double>& taus,
                                         std::uint64_t seed) {
  std::vector<Mask> masks;
  masks.reserve(taus.size());
  for (size_t i = 0; i < taus.size(); ++i) {
    check_tau(taus[i]);
    masks.push_back(biased_select(g, test_nodes, spec, taus[i],
                                  Rng::derive(seed, rng_stream::kSelection, 1000 + i)));
  }
  return masks;
}

std::vector<int> mask_to_indices(const Mask& m) {
  std::vector<int> idx;
  for (size_t i = 0; i < m.size(); ++i) {
    if (m[i]) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

}  // namespace stablegnn

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stablegnn/graph.hpp"

namespace stablegnn {

using Mask = std::vector<std::uint8_t>;

// Which per-node factor drives the selection probability, and how severely.
// tau is the bias ratio: a node in the favored group is selected with
// probability tau, all others with 1-tau. tau = 0.5 is unbiased.
struct BiasSpec {
  enum class Factor { LabelThreshold, Attribute };
  Factor factor = Factor::LabelThreshold;
  int label_threshold = -1;  // -1 resolves to the median label
  std::string attr_name;
  std::string privileged_value;
  double tau = 0.5;
};

// Observational environment plus K generated selection masks. Environment 0
// is always present; every generated mask is a subset of it and every
// environment has at least one labeled node.
struct EnvironmentSet {
  int num_nodes = 0;
  std::vector<Mask> masks;                  // masks[0] = observational
  std::vector<std::vector<int>> labeled;    // sorted node ids per environment

  int size() const { return static_cast<int>(masks.size()); }
  int num_generated() const { return size() - 1; }
};

int median_label(const Graph& g);

// Independent Bernoulli per candidate node: tau if label >= threshold,
// 1-tau otherwise. Deterministic for a given seed.
Mask biased_select_by_label(const Graph& g, const std::vector<int>& candidates, int threshold,
                            double tau, std::uint64_t seed);

// Same, keyed on a categorical attribute column (tau for the privileged value).
Mask biased_select_by_attribute(const std::vector<std::string>& column, int num_nodes,
                                const std::vector<int>& candidates,
                                const std::string& privileged_value, double tau,
                                std::uint64_t seed);
Mask biased_select_by_attribute(const Graph& g, const std::vector<int>& candidates,
                                const std::string& attr_name, const std::string& privileged_value,
                                double tau, std::uint64_t seed);
Mask biased_select_by_attribute(const BipartiteGraph& b, const std::vector<int>& candidate_users,
                                const std::string& attr_name, const std::string& privileged_value,
                                double tau, std::uint64_t seed);

// Applies the configured factor for one environment draw.
Mask biased_select(const Graph& g, const std::vector<int>& candidates, const BiasSpec& spec,
                   double tau, std::uint64_t seed);

// Environment 0 is train_nodes as given; environments 1..K are biased draws
// with alternating bias direction (odd environments use tau, even use 1-tau)
// so the generated distributions genuinely differ.
EnvironmentSet build_environments(const Graph& g, const std::vector<int>& train_nodes,
                                  const BiasSpec& spec, int num_generated, std::uint64_t seed);

// One independently drawn mask per test bias ratio.
std::vector<Mask> make_test_environments(const Graph& g, const std::vector<int>& test_nodes,
                                         const BiasSpec& spec, const std::vector<double>& taus,
                                         std::uint64_t seed);

std::vector<int> mask_to_indices(const Mask& m);

}  // namespace stablegnn

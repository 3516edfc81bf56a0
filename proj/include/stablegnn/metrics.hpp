#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stablegnn/environments.hpp"
#include "stablegnn/recommender.hpp"
#include "stablegnn/tensor.hpp"

namespace stablegnn {

// Fraction of masked nodes whose argmax logit equals the label; argmax ties
// break toward the lowest class id so reports are deterministic.
double accuracy(const Tensor& logits, const std::vector<int>& labels, const Mask& mask);

// Mean over users (optionally restricted by mask) of DCG@n / IDCG@n with
// 1-based positions; users with an empty relevance set are excluded. Errors
// if every user's relevance set is empty.
double ndcg_at_n(const RankingResult& ranking, int n, const Mask* user_mask = nullptr);

double average_score(const std::vector<double>& scores);

// Bessel-corrected sample standard deviation; needs at least two scores.
double stability_error(const std::vector<double>& scores);

struct ScoreEntry {
  std::string env;  // tau value or day tag
  double score = 0.0;
};

struct ScoreReport {
  std::string metric;
  std::string model;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<ScoreEntry> entries;
  double avg = 0.0;
  double stability = 0.0;
};

ScoreReport make_report(std::string metric, std::string model, std::uint64_t seed,
                        std::string config_hash, std::vector<ScoreEntry> entries);

}  // namespace stablegnn

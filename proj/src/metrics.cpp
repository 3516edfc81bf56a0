#include "stablegnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stablegnn {

double accuracy(const Tensor& logits, const std::vector<int>& labels, const Mask& mask) {
  if (logits.rank() != 2 || static_cast<size_t>(logits.shape()[0]) != labels.size() ||
      labels.size() != mask.size()) {
    throw std::invalid_argument("accuracy: logits/labels/mask sizes disagree");
  }
  int n = logits.shape()[0], c = logits.shape()[1];
  long total = 0, correct = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++total;
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    if (best == labels[i]) ++correct;
  }
  if (total == 0) throw std::invalid_argument("accuracy: empty mask");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double ndcg_at_n(const RankingResult& ranking, int n, const Mask* user_mask) {
  if (n < 1) throw std::invalid_argument("ndcg_at_n: n must be >= 1");
  if (ranking.topn.size() != ranking.relevant.size()) {
    throw std::invalid_argument("ndcg_at_n: ranking lists and relevance sets disagree");
  }
  double total = 0.0;
  long counted = 0;
  for (size_t u = 0; u < ranking.topn.size(); ++u) {
    if (user_mask && !(*user_mask)[u]) continue;
    const auto& relevant = ranking.relevant[u];
    if (relevant.empty()) continue;
    const auto& rec = ranking.topn[u];
    int len = std::min<int>(n, static_cast<int>(rec.size()));
    double dcg = 0.0;
    for (int r = 0; r < len; ++r) {
      if (std::binary_search(relevant.begin(), relevant.end(), rec[r])) {
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);  // rank r+1, discount log2(rank+1)
      }
    }
    int ideal = std::min<int>(n, static_cast<int>(relevant.size()));
    double idcg = 0.0;
    for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    total += dcg / idcg;
    ++counted;
  }
  if (counted == 0) throw std::runtime_error("ndcg_at_n: all users have empty relevance sets");
  return total / static_cast<double>(counted);
}

double average_score(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("average_score: no scores");
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

double stability_error(const std::vector<double>& scores) {
  if (scores.size() < 2) {
    throw std::invalid_argument("stability_error: needs at least two environments");
  }
  // Welford; the test suite checks this against an independent two-pass route.
  double mean = 0.0, m2 = 0.0;
  long n = 0;
  for (double s : scores) {
    ++n;
    double d = s - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (s - mean);
  }
  return std::sqrt(m2 / static_cast<double>(n - 1));
}

ScoreReport make_report(std::string metric, std::string model, std::uint64_t seed,
                        std::string config_hash, std::vector<ScoreEntry> entries) {
  ScoreReport r;
  r.metric = std::move(metric);
  r.model = std::move(model);
  r.seed = seed;
  r.config_hash = std::move(config_hash);
  r.entries = std::move(entries);
  std::vector<double> scores;
  scores.reserve(r.entries.size());
  for (const auto& e : r.entries) scores.push_back(e.score);
  r.avg = average_score(scores);
  r.stability = scores.size() >= 2 ? stability_error(scores) : 0.0;
  return r;
}

}  // namespace stablegnn

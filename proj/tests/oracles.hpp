#pragma once

// Test-side oracles, kept independent of the library's implementation paths:
// central finite differences, dense-matrix aggregation, brute-force NDCG, and
// a two-pass standard deviation. Used by the unit suites and the acceptance
// runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "stablegnn/rng.hpp"
#include "stablegnn/tensor.hpp"

namespace oracles {

using stablegnn::Rng;
using stablegnn::Tensor;

// d eval / d x by central differences, perturbing x in place.
inline Tensor finite_difference(const std::function<double()>& eval, Tensor& x,
                                double h = 1e-3) {
  Tensor grad = Tensor::zeros_like(x);
  for (long i = 0; i < x.numel(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double up = eval();
    x[i] = orig - h;
    double down = eval();
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Relative error with a unit floor: entries below O(1) compare absolutely,
// which keeps central-difference truncation noise (~h^2 * f''') from being
// ratioed against a tiny gradient.
inline double max_rel_error(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (long i = 0; i < a.numel(); ++i) {
    double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1.0});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Uniform values in [-2, 2], nudged away from 0 so piecewise ops are not
// probed at their kink.
inline Tensor random_tensor(std::vector<int> shape, Rng& rng, bool away_from_zero = false) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) {
    double v = rng.uniform(-2.0, 2.0);
    if (away_from_zero) {
      while (std::fabs(v) < 5e-3) v = rng.uniform(-2.0, 2.0);
    }
    t[i] = v;
  }
  return t;
}

// Dense reference for CSR weighted aggregation: out = A_w * h with
// A_w[target][source] = alpha of that edge.
inline Tensor dense_weighted_aggregate(const Tensor& h, const std::vector<int>& offsets,
                                       const std::vector<int>& sources,
                                       const std::vector<double>& alpha) {
  int n = static_cast<int>(offsets.size()) - 1;
  int f = h.cols();
  std::vector<std::vector<double>> dense(n, std::vector<double>(h.rows(), 0.0));
  for (int i = 0; i < n; ++i) {
    for (int k = offsets[i]; k < offsets[i + 1]; ++k) dense[i][sources[k]] += alpha[k];
  }
  Tensor out = Tensor::zeros({n, f});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < h.rows(); ++j) {
      if (dense[i][j] == 0.0) continue;
      for (int c = 0; c < f; ++c) out.at(i, c) += dense[i][j] * h.at(j, c);
    }
  }
  return out;
}

// Brute-force NDCG for one user: walks every position and accumulates gains.
inline double ndcg_single_user(const std::vector<int>& recommended,
                               const std::vector<int>& relevant, int n) {
  double dcg = 0.0;
  int len = std::min<int>(n, static_cast<int>(recommended.size()));
  for (int pos = 1; pos <= len; ++pos) {
    int item = recommended[pos - 1];
    bool hit = std::find(relevant.begin(), relevant.end(), item) != relevant.end();
    if (hit) dcg += 1.0 / std::log2(pos + 1.0);
  }
  double idcg = 0.0;
  int ideal = std::min<int>(n, static_cast<int>(relevant.size()));
  for (int pos = 1; pos <= ideal; ++pos) idcg += 1.0 / std::log2(pos + 1.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

// Two-pass sample standard deviation (the library uses Welford).
inline double two_pass_stddev(const std::vector<double>& scores) {
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  return std::sqrt(ss / static_cast<double>(scores.size() - 1));
}

// Pairwise squared-gap sum, the direct form of the variance identity.
inline double pairwise_gap_sum(const std::vector<double>& v) {
  double total = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    for (size_t j = i + 1; j < v.size(); ++j) total += (v[i] - v[j]) * (v[i] - v[j]);
  }
  return total;
}

inline double variance_identity_rhs(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return static_cast<double>(v.size()) * ss;
}

}  // namespace oracles

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "stablegnn/recommender.hpp"
#include "stablegnn/synthetic.hpp"

using namespace stablegnn;
using ad::Parameter;
using ad::Tape;
using ad::Value;
using oracles::finite_difference;
using oracles::max_rel_error;
using oracles::random_tensor;

namespace {

BipartiteAdj toy_adj(int users, int items, const std::vector<std::pair<int, int>>& edges) {
  BipartiteGraph b;
  b.num_users = users;
  b.num_items = items;
  for (auto [u, i] : edges) b.interactions.push_back({u, i, 0});
  b.finalize();
  return build_bipartite_adj(b, 0);
}

// Dense re-derivation of one propagation layer, looping over edges directly.
Tensor dense_rec_layer(const Tensor& h, const BipartiteAdj& adj, const std::vector<double>& alpha,
                       const Tensor& w1, const Tensor& w2, double slope) {
  int u_count = adj.num_users;
  int n = h.rows(), d = h.cols();
  Tensor tw1 = Tensor::zeros({n, d});
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) {
      for (int k = 0; k < d; ++k) tw1.at(r, c) += h.at(r, k) * w1.at(k, c);
    }
  }
  Tensor agg = Tensor::zeros({n, d});
  for (size_t e = 0; e < adj.edges.size(); ++e) {
    auto [u, i] = adj.edges[e];
    int iv = u_count + i;
    double coeff = alpha[e] / std::sqrt(static_cast<double>(adj.user_degree[u]) *
                                        static_cast<double>(adj.item_degree[i]));
    for (int c = 0; c < d; ++c) {
      double prod_ui = 0.0, prod_iu = 0.0;
      for (int k = 0; k < d; ++k) {
        prod_ui += h.at(iv, k) * h.at(u, k) * w2.at(k, c);
        prod_iu += h.at(u, k) * h.at(iv, k) * w2.at(k, c);
      }
      agg.at(u, c) += coeff * (tw1.at(iv, c) + prod_ui);
      agg.at(iv, c) += coeff * (tw1.at(u, c) + prod_iu);
    }
  }
  Tensor out = Tensor::zeros({n, d});
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) {
      double v = tw1.at(r, c) + agg.at(r, c);
      out.at(r, c) = v >= 0.0 ? v : slope * v;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("rec edge weights") {
  SUBCASE("zero attention vector gives 0.5 on every interaction") {
    BipartiteAdj adj = toy_adj(2, 3, {{0, 0}, {0, 1}, {1, 1}, {1, 2}});
    RecModel m = init_rec_model(2, 3, 4, 2, 1, true, 1);
    m.attn[0].value = Tensor::zeros({8});
    Tape t;
    Value alpha = rec_edge_weights(t, m, adj, 0);
    for (long k = 0; k < t.val(alpha).numel(); ++k) {
      CHECK(t.val(alpha)[k] == doctest::Approx(0.5));
    }
  }
  SUBCASE("matches the scalar sigmoid oracle on a 1-user/1-item graph") {
    BipartiteAdj adj = toy_adj(1, 1, {{0, 0}});
    RecModel m = init_rec_model(1, 1, 3, 1, 1, true, 2);
    Tape t;
    Value alpha = rec_edge_weights(t, m, adj, 0);
    double dot = 0.0;
    for (int c = 0; c < 3; ++c) {
      dot += m.attn[0].value[c] * m.embeddings.value.at(0, c);
      dot += m.attn[0].value[3 + c] * m.embeddings.value.at(1, c);
    }
    CHECK(t.val(alpha)[0] == doctest::Approx(1.0 / (1.0 + std::exp(-dot))).epsilon(1e-12));
  }
  SUBCASE("weights come from layer-0 embeddings, shared across layers") {
    BipartiteAdj adj = toy_adj(2, 2, {{0, 0}, {1, 1}, {0, 1}});
    RecModel m = init_rec_model(2, 2, 4, 3, 1, true, 3);
    Tape t1;
    Tensor before = t1.val(rec_edge_weights(t1, m, adj, 0));
    for (auto& w : m.w1) w.value = Tensor::full({4, 4}, 0.33);  // W does not enter alpha
    Tape t2;
    Tensor after = t2.val(rec_edge_weights(t2, m, adj, 0));
    CHECK(before.data() == after.data());
  }
}

TEST_CASE("propagate_bipartite") {
  SUBCASE("single edge with alpha 1 reduces to the hand formula") {
    BipartiteAdj adj = toy_adj(1, 1, {{0, 0}});
    RecModel m = init_rec_model(1, 1, 3, 1, 1, false, 4);
    RecProp prop = make_rec_prop(adj);
    Tape t;
    Value alpha = t.constant(Tensor::row_vector({1.0}));
    auto fwd = propagate_bipartite(t, m, adj, prop, alpha);
    // sqrt(|N_u||N_i|) = 1, so e_u' = leaky(w1.e_u + w1.e_i + w2.(e_i * e_u)).
    const Tensor& e = m.embeddings.value;
    for (int c = 0; c < 3; ++c) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k) {
        v += e.at(0, k) * m.w1[0].value.at(k, c);
        v += e.at(1, k) * m.w1[0].value.at(k, c);
        v += e.at(1, k) * e.at(0, k) * m.w2[0].value.at(k, c);
      }
      double expect = v >= 0 ? v : 0.2 * v;
      CHECK(t.val(fwd.final_emb).at(0, c) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("concatenated output has d * (layers + 1) columns") {
    BipartiteAdj adj = toy_adj(2, 2, {{0, 0}, {1, 1}, {0, 1}});
    RecModel m = init_rec_model(2, 2, 4, 3, 1, true, 5);
    RecProp prop = make_rec_prop(adj);
    Tape t;
    auto fwd = propagate_bipartite(t, m, adj, prop, rec_edge_weights(t, m, adj, 0));
    CHECK(t.val(fwd.final_emb).shape() == std::vector<int>{4, 16});
  }
  SUBCASE("matches the dense oracle on a 3-user/4-item graph within 1e-12") {
    Rng rng(6);
    BipartiteAdj adj = toy_adj(3, 4, {{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 2}, {2, 3}, {0, 3}});
    RecModel m = init_rec_model(3, 4, 5, 2, 1, false, 6);
    RecProp prop = make_rec_prop(adj);
    std::vector<double> alpha(adj.edges.size());
    for (auto& a : alpha) a = rng.uniform(0.1, 0.9);
    Tape t;
    auto fwd = propagate_bipartite(t, m, adj, prop, t.constant(Tensor::row_vector(alpha)));
    Tensor h = m.embeddings.value;
    h = dense_rec_layer(h, adj, alpha, m.w1[0].value, m.w2[0].value, m.leaky_slope);
    h = dense_rec_layer(h, adj, alpha, m.w1[1].value, m.w2[1].value, m.leaky_slope);
    for (long i = 0; i < h.numel(); ++i) {
      CHECK(std::fabs(t.val(fwd.final_emb)[i] - h[i]) < 1e-12);
    }
  }
  SUBCASE("alpha 1, W2 = 0, identity activation reduce to normalized linear propagation") {
    BipartiteAdj adj = toy_adj(2, 3, {{0, 0}, {0, 1}, {1, 1}, {1, 2}});
    RecModel m = init_rec_model(2, 3, 4, 1, 1, false, 7);
    m.leaky_slope = 1.0;
    for (auto& w : m.w2) w.value = Tensor::zeros({4, 4});
    RecProp prop = make_rec_prop(adj);
    Tape t;
    Value ones = t.constant(Tensor::full({4}, 1.0));
    auto fwd = propagate_bipartite(t, m, adj, prop, ones);
    // e'_n = W1 e_n + sum_nbr W1 e_nbr / sqrt(d_n d_nbr), entirely linear.
    const Tensor& e = m.embeddings.value;
    Tensor tw1 = Tensor::zeros({5, 4});
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 4; ++c) {
        for (int k = 0; k < 4; ++k) tw1.at(r, c) += e.at(r, k) * m.w1[0].value.at(k, c);
      }
    }
    Tensor expect = tw1;
    for (size_t k = 0; k < adj.edges.size(); ++k) {
      auto [u, i] = adj.edges[k];
      double coeff = 1.0 / std::sqrt(static_cast<double>(adj.user_degree[u] * adj.item_degree[i]));
      for (int c = 0; c < 4; ++c) {
        expect.at(u, c) += coeff * tw1.at(2 + i, c);
        expect.at(2 + i, c) += coeff * tw1.at(u, c);
      }
    }
    for (long i = 0; i < expect.numel(); ++i) {
      CHECK(t.val(fwd.final_emb)[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
  }
  SUBCASE("propagation gradient matches finite differences") {
    BipartiteAdj adj = toy_adj(2, 3, {{0, 0}, {0, 1}, {1, 1}, {1, 2}});
    RecModel m = init_rec_model(2, 3, 3, 2, 1, true, 8);
    RecProp prop = make_rec_prop(adj);
    auto eval = [&] {
      Tape t;
      auto fwd = propagate_bipartite(t, m, adj, prop, rec_edge_weights(t, m, adj, 0));
      return t.val(t.sum(t.mul(fwd.final_emb, fwd.final_emb)))[0];
    };
    Tape t;
    auto fwd = propagate_bipartite(t, m, adj, prop, rec_edge_weights(t, m, adj, 0));
    t.backward(t.sum(t.mul(fwd.final_emb, fwd.final_emb)));
    for (auto* p : m.all_params()) {
      CHECK(max_rel_error(*t.grad_of(*p), finite_difference(eval, p->value)) < 1e-4);
    }
  }
}

TEST_CASE("bpr loss") {
  SUBCASE("huge positive margin gives ~0, equal scores give ln 2") {
    Tape t;
    // Rows: user, pos item, neg item (already "final" embeddings).
    Value emb = t.constant(Tensor::matrix(3, 2, {1.0, 0.0,   // user
                                                 50.0, 0.0,  // strong positive
                                                 0.0, 0.0})); // indifferent negative
    auto loss = bpr_loss(t, emb, 1, {0}, {0}, {1});
    CHECK(t.val(loss.scalar)[0] == doctest::Approx(0.0).epsilon(1e-12));

    Value emb2 = t.constant(Tensor::matrix(3, 2, {1.0, 0.0, 2.0, 0.0, 2.0, 0.0}));
    auto loss2 = bpr_loss(t, emb2, 1, {0}, {0}, {1});
    CHECK(t.val(loss2.scalar)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("gradient vs finite differences on a 2x2 toy") {
    Rng rng(9);
    Parameter emb(random_tensor({4, 3}, rng), "emb");  // 2 users, 2 items
    std::vector<int> users = {0, 1}, pos = {0, 1}, neg = {1, 0};
    auto eval = [&] {
      Tape t;
      auto loss = bpr_loss(t, t.param(emb), 2, users, pos, neg);
      return t.val(loss.scalar)[0];
    };
    Tape t;
    auto loss = bpr_loss(t, t.param(emb), 2, users, pos, neg);
    t.backward(loss.scalar);
    CHECK(max_rel_error(*t.grad_of(emb), finite_difference(eval, emb.value)) < 1e-4);
  }
}

TEST_CASE("negative sampling avoids positives and is deterministic") {
  SyntheticRecSpec spec;
  spec.num_users = 40;
  spec.num_items = 60;
  spec.seed = 10;
  BipartiteGraph b = generate_synthetic_bipartite(spec);
  BipartiteAdj adj = build_bipartite_adj(b, 0);
  std::vector<std::set<int>> pos(adj.num_users);
  for (auto [u, i] : adj.edges) pos[u].insert(i);
  Rng r1(123), r2(123);
  auto n1 = sample_negatives(adj, r1);
  auto n2 = sample_negatives(adj, r2);
  CHECK(n1 == n2);
  for (size_t k = 0; k < adj.edges.size(); ++k) {
    CHECK(pos[adj.edges[k].first].count(n1[k]) == 0);
  }
}

TEST_CASE("recommend_topn") {
  SUBCASE("single candidate item gives a length-1 list") {
    Tensor users = Tensor::matrix(1, 2, {1.0, 0.0});
    Tensor items = Tensor::matrix(2, 2, {0.5, 0.0, 0.9, 0.0});
    RankingResult r = recommend_topn(users, items, {{1}}, 10);
    REQUIRE(r.topn[0].size() == 1);
    CHECK(r.topn[0][0] == 0);  // item 1 excluded
  }
  SUBCASE("excluded items never appear") {
    Rng rng(11);
    Tensor users = random_tensor({3, 4}, rng);
    Tensor items = random_tensor({20, 4}, rng);
    std::vector<std::vector<int>> exclude = {{0, 1, 2}, {5, 6}, {}};
    RankingResult r = recommend_topn(users, items, exclude, 8);
    for (int u = 0; u < 3; ++u) {
      for (int item : r.topn[u]) {
        for (int ex : exclude[u]) CHECK(item != ex);
      }
    }
  }
  SUBCASE("ordering matches a brute-force sort with id tie-break") {
    Rng rng(12);
    Tensor users = random_tensor({2, 3}, rng);
    Tensor items = Tensor::zeros({10, 3});
    for (int i = 0; i < 10; ++i) {
      for (int c = 0; c < 3; ++c) items.at(i, c) = (i / 2) * 0.5;  // forced score ties
    }
    RankingResult r = recommend_topn(users, items, {{}, {}}, 10);
    for (int u = 0; u < 2; ++u) {
      std::vector<std::pair<double, int>> scored;
      for (int i = 0; i < 10; ++i) {
        double s = 0;
        for (int c = 0; c < 3; ++c) s += users.at(u, c) * items.at(i, c);
        scored.emplace_back(s, i);
      }
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (int k = 0; k < 10; ++k) CHECK(r.topn[u][k] == scored[k].second);
    }
  }
}

TEST_CASE("stable recommender training contracts") {
  SyntheticRecSpec spec;
  spec.num_users = 50;
  spec.num_items = 70;
  spec.interactions_per_user = 12;
  spec.eval_interactions_per_user = 6;
  spec.seed = 13;
  spec.train_bias_tau = 0.7;
  BipartiteGraph b = generate_synthetic_bipartite(spec);
  BipartiteAdj adj = build_bipartite_adj(b, 0);
  BiasSpec bias;
  bias.factor = BiasSpec::Factor::Attribute;
  bias.attr_name = "gender";
  bias.privileged_value = "M";
  bias.tau = 0.7;
  EnvironmentSet envs = build_user_environments(b, bias, 2, 13);

  SUBCASE("environment masks cover users and alternate the bias") {
    REQUIRE(envs.size() == 3);
    const auto& gender = b.attribute("gender");
    auto male_fraction = [&](int e) {
      long m = 0;
      for (int u : envs.labeled[e]) {
        if (gender[u] == "M") ++m;
      }
      return static_cast<double>(m) / envs.labeled[e].size();
    };
    CHECK(male_fraction(1) > male_fraction(0));
    CHECK(male_fraction(2) < male_fraction(0));
  }

  SUBCASE("freeze contract: backbone untouched when the outer step is disabled") {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 13;
    cfg.embedding_dim = 8;
    cfg.rec_layers = 2;
    cfg.lr = 0.0;
    cfg.inner_lr = 0.05;
    cfg.num_generated_envs = 2;
    RecModel fresh = init_rec_model(adj.num_users, adj.num_items, 8, 2, envs.size(), true, 13);
    RecTrainResult r = train_stable_recommender(adj, envs, cfg);
    CHECK(r.model.embeddings.value.data() == fresh.embeddings.value.data());
    for (int l = 0; l < 2; ++l) {
      CHECK(r.model.w1[l].value.data() == fresh.w1[l].value.data());
      CHECK(r.model.w2[l].value.data() == fresh.w2[l].value.data());
    }
    bool predictor_moved = false;
    for (int e = 1; e <= 2; ++e) {
      if (r.model.attn[e].value.data() != fresh.attn[e].value.data()) predictor_moved = true;
    }
    CHECK(predictor_moved);
  }

  SUBCASE("reduction: no environments and zero lambdas match the baseline bitwise") {
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.seed = 13;
    cfg.embedding_dim = 8;
    cfg.rec_layers = 2;
    cfg.lambda0 = 0.0;
    cfg.lambda1 = 0.0;
    cfg.num_generated_envs = 0;
    EnvironmentSet none = build_user_environments(b, bias, 0, 13);
    RecTrainResult stable = train_stable_recommender(adj, none, cfg);
    RecTrainResult base = train_baseline_recommender(adj, cfg);
    auto sp = stable.model.all_params();
    auto bp = base.model.all_params();
    REQUIRE(sp.size() == bp.size());
    for (size_t i = 0; i < sp.size(); ++i) CHECK(sp[i]->value.data() == bp[i]->value.data());
  }

  SUBCASE("lambda1 shrinks the final global gap on paired seeds") {
    // Before full convergence; once every environment's loss is near zero the
    // gap comparison measures nothing.
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 13;
    cfg.embedding_dim = 8;
    cfg.rec_layers = 2;
    cfg.lambda0 = 0.0;
    cfg.num_generated_envs = 2;
    cfg.lr = 0.01;
    cfg.inner_lr = 0.01;
    cfg.lambda1 = 0.0;
    RecTrainResult off = train_stable_recommender(adj, envs, cfg);
    cfg.lambda1 = 1.0;
    RecTrainResult on = train_stable_recommender(adj, envs, cfg);
    CHECK(on.log.back().losses.global < off.log.back().losses.global);
  }
}

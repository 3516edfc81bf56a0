#include "stablegnn/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace stablegnn {

using ad::Adam;
using ad::Tape;
using ad::Value;

std::vector<ad::Parameter*> RecModel::backbone_params() {
  std::vector<ad::Parameter*> out{&embeddings};
  for (auto& w : w1) out.push_back(&w);
  for (auto& w : w2) out.push_back(&w);
  return out;
}

std::vector<ad::Parameter*> RecModel::all_params() {
  auto out = backbone_params();
  for (auto& a : attn) out.push_back(&a);
  return out;
}

void RecModel::set_backbone_frozen(bool frozen) {
  for (auto* p : backbone_params()) p->requires_grad = !frozen;
}

RecModel init_rec_model(int num_users, int num_items, int dim, int layers, int num_environments,
                        bool concat_layer_outputs, std::uint64_t seed) {
  RecModel m;
  m.num_users = num_users;
  m.num_items = num_items;
  m.dim = dim;
  m.layers = layers;
  m.concat_layer_outputs = concat_layer_outputs;

  Rng rng(Rng::derive(seed, rng_stream::kInit));
  int n = num_users + num_items;
  double limit = std::sqrt(6.0 / (n + dim));
  Tensor emb = Tensor::zeros({n, dim});
  for (long i = 0; i < emb.numel(); ++i) emb[i] = rng.uniform(-limit, limit);
  m.embeddings = ad::Parameter(std::move(emb), "E0");

  double wl = std::sqrt(6.0 / (dim + dim));
  for (int l = 0; l < layers; ++l) {
    Tensor t1 = Tensor::zeros({dim, dim});
    for (long i = 0; i < t1.numel(); ++i) t1[i] = rng.uniform(-wl, wl);
    m.w1.emplace_back(std::move(t1), "W1_l" + std::to_string(l));
    Tensor t2 = Tensor::zeros({dim, dim});
    for (long i = 0; i < t2.numel(); ++i) t2[i] = rng.uniform(-wl, wl);
    m.w2.emplace_back(std::move(t2), "W2_l" + std::to_string(l));
  }
  double al = std::sqrt(6.0 / (2 * dim + 1));
  for (int e = 0; e < num_environments; ++e) {
    Tensor a = Tensor::zeros({2 * dim});
    for (long i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-al, al);
    m.attn.emplace_back(std::move(a), "a_e" + std::to_string(e));
  }
  return m;
}

RecProp make_rec_prop(const BipartiteAdj& adj) {
  RecProp p;
  int u_count = adj.num_users, i_count = adj.num_items;
  p.num_nodes = u_count + i_count;
  p.offsets.assign(p.num_nodes + 1, 0);
  for (int u = 0; u < u_count; ++u) p.offsets[u + 1] = p.offsets[u] + adj.user_degree[u];
  for (int i = 0; i < i_count; ++i) {
    p.offsets[u_count + i + 1] = p.offsets[u_count + i] + adj.item_degree[i];
  }
  long total = p.offsets[p.num_nodes];
  p.dir_sources.reserve(total);
  p.dir_targets.reserve(total);
  p.dir_edge_ids.reserve(total);
  p.dir_coeffs.reserve(total);
  auto coeff = [&](int e) {
    auto [u, i] = adj.edges[e];
    return 1.0 / std::sqrt(static_cast<double>(adj.user_degree[u]) *
                           static_cast<double>(adj.item_degree[i]));
  };
  for (int u = 0; u < u_count; ++u) {
    for (int k = adj.user_offsets[u]; k < adj.user_offsets[u + 1]; ++k) {
      int e = adj.user_edge_ids[k];
      p.dir_sources.push_back(u_count + adj.edges[e].second);
      p.dir_targets.push_back(u);
      p.dir_edge_ids.push_back(e);
      p.dir_coeffs.push_back(coeff(e));
    }
  }
  for (int i = 0; i < i_count; ++i) {
    for (int k = adj.item_offsets[i]; k < adj.item_offsets[i + 1]; ++k) {
      int e = adj.item_edge_ids[k];
      p.dir_sources.push_back(adj.edges[e].first);
      p.dir_targets.push_back(u_count + i);
      p.dir_edge_ids.push_back(e);
      p.dir_coeffs.push_back(coeff(e));
    }
  }
  return p;
}

Value rec_edge_weights(Tape& t, RecModel& model, const BipartiteAdj& adj, int env) {
  if (env < 0 || env >= static_cast<int>(model.attn.size())) {
    throw std::invalid_argument("rec_edge_weights: no predictor for environment " +
                                std::to_string(env));
  }
  Value e0 = t.param(model.embeddings);
  std::vector<int> users, items;
  users.reserve(adj.edges.size());
  items.reserve(adj.edges.size());
  for (auto [u, i] : adj.edges) {
    users.push_back(u);
    items.push_back(model.num_users + i);
  }
  Value eu = t.gather_rows(e0, users);
  Value ei = t.gather_rows(e0, items);
  Value cat = t.concat(eu, ei, 1);
  Value a = t.param(model.attn[env]);
  return t.sigmoid(t.matmul(cat, a));
}

RecForward propagate_bipartite(Tape& t, RecModel& model, const BipartiteAdj& adj,
                               const RecProp& prop, Value alpha) {
  if (t.val(alpha).numel() != static_cast<long>(adj.edges.size())) {
    throw std::invalid_argument("propagate_bipartite: alpha does not match interaction count");
  }
  Value emb = t.param(model.embeddings);
  // Per-directed-edge scale: alpha of the interaction times its normalizer.
  Value alpha_dir = t.gather_rows(alpha, prop.dir_edge_ids);
  Value coeff = t.constant(Tensor::row_vector(prop.dir_coeffs), "rec_coeffs");
  Value edge_scale = t.mul(alpha_dir, coeff);

  std::vector<Value> layer_outputs{emb};
  Value h = emb;
  for (int l = 0; l < model.layers; ++l) {
    Value w1 = t.param(model.w1[l]);
    Value w2 = t.param(model.w2[l]);
    Value tw1 = t.matmul(h, w1);
    Value nbr = t.gather_rows(tw1, prop.dir_sources);
    Value prod = t.mul(t.gather_rows(h, prop.dir_sources), t.gather_rows(h, prop.dir_targets));
    Value msg = t.add(nbr, t.matmul(prod, w2));
    Value scaled = t.row_scale(msg, edge_scale);
    Value agg = t.segment_sum(scaled, prop.offsets);
    h = t.leaky_relu(t.add(tw1, agg), model.leaky_slope);
    layer_outputs.push_back(h);
  }

  Value final_emb;
  if (model.concat_layer_outputs) {
    final_emb = layer_outputs[0];
    for (size_t l = 1; l < layer_outputs.size(); ++l) {
      final_emb = t.concat(final_emb, layer_outputs[l], 1);
    }
  } else {
    final_emb = layer_outputs.back();
  }
  return RecForward{final_emb, alpha};
}

BprLoss bpr_loss(Tape& t, Value final_emb, int num_users, const std::vector<int>& users,
                 const std::vector<int>& pos_items, const std::vector<int>& neg_items) {
  if (users.size() != pos_items.size() || users.size() != neg_items.size()) {
    throw std::invalid_argument("bpr_loss: users/pos/neg length mismatch");
  }
  if (users.empty()) throw std::invalid_argument("bpr_loss: empty batch");
  std::vector<int> pos, neg;
  pos.reserve(pos_items.size());
  neg.reserve(neg_items.size());
  for (int i : pos_items) pos.push_back(num_users + i);
  for (int i : neg_items) neg.push_back(num_users + i);
  Value fu = t.gather_rows(final_emb, users);
  Value fp = t.gather_rows(final_emb, pos);
  Value fn = t.gather_rows(final_emb, neg);
  Value s_pos = t.row_sum(t.mul(fu, fp));
  Value s_neg = t.row_sum(t.mul(fu, fn));
  Value per = t.neg_log_sigmoid(t.sub(s_pos, s_neg));
  return BprLoss{t.mean(per), per};
}

std::vector<int> sample_negatives(const BipartiteAdj& adj, Rng& rng) {
  std::vector<std::set<int>> positives(adj.num_users);
  for (auto [u, i] : adj.edges) positives[u].insert(i);
  std::vector<int> negatives;
  negatives.reserve(adj.edges.size());
  for (auto [u, i] : adj.edges) {
    (void)i;
    int candidate;
    do {
      candidate = static_cast<int>(rng.below(adj.num_items));
    } while (positives[u].count(candidate) > 0);
    negatives.push_back(candidate);
  }
  return negatives;
}

RankingResult recommend_topn(const Tensor& user_emb, const Tensor& item_emb,
                             const std::vector<std::vector<int>>& exclude_train, int n) {
  if (n < 1) throw std::invalid_argument("recommend_topn: n must be >= 1");
  int u_count = user_emb.rows(), i_count = item_emb.rows(), d = user_emb.cols();
  if (item_emb.cols() != d) {
    throw std::invalid_argument("recommend_topn: embedding dims differ");
  }
  RankingResult out;
  out.topn.resize(u_count);
  out.relevant.resize(u_count);
  std::vector<std::pair<double, int>> scored;
  for (int u = 0; u < u_count; ++u) {
    std::set<int> excluded;
    if (u < static_cast<int>(exclude_train.size())) {
      excluded.insert(exclude_train[u].begin(), exclude_train[u].end());
    }
    scored.clear();
    for (int i = 0; i < i_count; ++i) {
      if (excluded.count(i)) continue;
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += user_emb.at(u, c) * item_emb.at(i, c);
      scored.emplace_back(s, i);
    }
    int keep = std::min<int>(n, static_cast<int>(scored.size()));
    std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    out.topn[u].reserve(keep);
    for (int r = 0; r < keep; ++r) out.topn[u].push_back(scored[r].second);
  }
  return out;
}

EnvironmentSet build_user_environments(const BipartiteGraph& b, const BiasSpec& spec,
                                       int num_generated, std::uint64_t seed) {
  if (spec.factor != BiasSpec::Factor::Attribute) {
    throw std::invalid_argument("recommender environments use attribute-based selection");
  }
  std::vector<int> all_users(b.num_users);
  for (int u = 0; u < b.num_users; ++u) all_users[u] = u;

  EnvironmentSet env;
  env.num_nodes = b.num_users;
  env.masks.push_back(Mask(b.num_users, 1));
  env.labeled.push_back(all_users);
  for (int k = 1; k <= num_generated; ++k) {
    double tau_k = (k % 2 == 1) ? spec.tau : 1.0 - spec.tau;
    Mask m = biased_select_by_attribute(b, all_users, spec.attr_name, spec.privileged_value,
                                        tau_k, Rng::derive(seed, rng_stream::kSelection, k));
    auto idx = mask_to_indices(m);
    if (idx.empty()) {
      throw std::runtime_error("user environment " + std::to_string(k) + " is empty");
    }
    env.masks.push_back(std::move(m));
    env.labeled.push_back(std::move(idx));
  }
  return env;
}

namespace {

// Per-interaction membership masks: an interaction belongs to every
// environment its user belongs to. Environment 0 covers all interactions.
std::vector<Mask> interaction_masks(const BipartiteAdj& adj, const EnvironmentSet& user_envs) {
  std::vector<Mask> masks;
  masks.reserve(user_envs.size());
  for (int e = 0; e < user_envs.size(); ++e) {
    Mask m(adj.edges.size(), 0);
    for (size_t k = 0; k < adj.edges.size(); ++k) {
      m[k] = user_envs.masks[e][adj.edges[k].first];
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

void check_finite(const LossBreakdown& b, int epoch) {
  if (!std::isfinite(b.pred) || !std::isfinite(b.local) || !std::isfinite(b.global)) {
    throw std::runtime_error("recommender training diverged at epoch " + std::to_string(epoch));
  }
}

}  // namespace

RecTrainResult train_stable_recommender(const BipartiteAdj& adj, const EnvironmentSet& user_envs,
                                        const TrainConfig& cfg) {
  const int k = user_envs.num_generated();
  RecTrainResult result{init_rec_model(adj.num_users, adj.num_items, cfg.embedding_dim,
                                       cfg.rec_layers, user_envs.size(),
                                       cfg.concat_layer_outputs, cfg.seed),
                        {}};
  RecModel& model = result.model;
  RecProp prop = make_rec_prop(adj);
  auto inter_masks = interaction_masks(adj, user_envs);

  std::vector<int> users;
  std::vector<int> pos_items;
  users.reserve(adj.edges.size());
  pos_items.reserve(adj.edges.size());
  for (auto [u, i] : adj.edges) {
    users.push_back(u);
    pos_items.push_back(i);
  }

  std::vector<ad::Parameter*> outer_params = model.backbone_params();
  outer_params.push_back(&model.attn[0]);
  Adam outer(outer_params, cfg.adam(cfg.lr));
  std::vector<Adam> inner;
  for (int e = 1; e <= k; ++e) inner.emplace_back(std::vector<ad::Parameter*>{&model.attn[e]}, cfg.adam(cfg.inner_lr));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng neg_rng(Rng::derive(cfg.seed, rng_stream::kNegatives, epoch));
    std::vector<int> negatives = sample_negatives(adj, neg_rng);

    CachedAlphas cached;
    if (k > 0) {
      model.set_backbone_frozen(true);
      for (int e = 1; e <= k; ++e) {
        for (int step = 0; step < cfg.inner_steps; ++step) {
          Tape t;
          Value alpha = rec_edge_weights(t, model, adj, e);
          auto fwd = propagate_bipartite(t, model, adj, prop, alpha);
          auto loss = bpr_loss(t, fwd.final_emb, adj.num_users, users, pos_items, negatives);
          Value env_loss = t.masked_mean(loss.per_interaction, inter_masks[e]);
          t.backward(env_loss);
          inner[e - 1].step(t);
        }
        Tape t;
        Value alpha = rec_edge_weights(t, model, adj, e);
        cached.push_back({t.val(alpha)});
      }
      model.set_backbone_frozen(false);
    }

    Tape t;
    Value alpha0 = rec_edge_weights(t, model, adj, 0);
    auto fwd = propagate_bipartite(t, model, adj, prop, alpha0);
    auto loss = bpr_loss(t, fwd.final_emb, adj.num_users, users, pos_items, negatives);
    Value pred = loss.scalar;

    Value local, global;
    LossBreakdown breakdown;
    if (k > 0) {
      local = local_regularizer(t, {alpha0}, cached);
      auto sublosses = env_subloss(t, loss.per_interaction, inter_masks);
      global = global_regularizer(t, sublosses);
      for (auto s : sublosses) breakdown.sublosses.push_back(t.val(s)[0]);
    }
    Value total = combined_loss(t, pred, local, global, cfg.lambda0, cfg.lambda1, &breakdown);
    check_finite(breakdown, epoch);
    t.backward(total);
    outer.step(t);

    result.log.push_back(EpochLog{epoch, std::move(breakdown)});
  }
  return result;
}

RecTrainResult train_baseline_recommender(const BipartiteAdj& adj, const TrainConfig& cfg) {
  RecTrainResult result{init_rec_model(adj.num_users, adj.num_items, cfg.embedding_dim,
                                       cfg.rec_layers, 1, cfg.concat_layer_outputs, cfg.seed),
                        {}};
  RecModel& model = result.model;
  RecProp prop = make_rec_prop(adj);

  std::vector<int> users;
  std::vector<int> pos_items;
  for (auto [u, i] : adj.edges) {
    users.push_back(u);
    pos_items.push_back(i);
  }
  Adam opt(model.all_params(), cfg.adam(cfg.lr));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng neg_rng(Rng::derive(cfg.seed, rng_stream::kNegatives, epoch));
    std::vector<int> negatives = sample_negatives(adj, neg_rng);

    Tape t;
    Value alpha = rec_edge_weights(t, model, adj, 0);
    auto fwd = propagate_bipartite(t, model, adj, prop, alpha);
    auto loss = bpr_loss(t, fwd.final_emb, adj.num_users, users, pos_items, negatives);
    LossBreakdown breakdown;
    breakdown.pred = t.val(loss.scalar)[0];
    check_finite(breakdown, epoch);
    t.backward(loss.scalar);
    opt.step(t);
    result.log.push_back(EpochLog{epoch, std::move(breakdown)});
  }
  return result;
}

std::pair<Tensor, Tensor> rec_final_embeddings(RecModel& model, const BipartiteAdj& adj,
                                               const RecProp& prop, int env) {
  Tape t;
  Value alpha = rec_edge_weights(t, model, adj, env);
  auto fwd = propagate_bipartite(t, model, adj, prop, alpha);
  const Tensor& all = t.val(fwd.final_emb);
  int d = all.cols();
  Tensor user_emb = Tensor::zeros({model.num_users, d});
  Tensor item_emb = Tensor::zeros({model.num_items, d});
  for (int u = 0; u < model.num_users; ++u) {
    for (int c = 0; c < d; ++c) user_emb.at(u, c) = all.at(u, c);
  }
  for (int i = 0; i < model.num_items; ++i) {
    for (int c = 0; c < d; ++c) item_emb.at(i, c) = all.at(model.num_users + i, c);
  }
  return {std::move(user_emb), std::move(item_emb)};
}

}  // namespace stablegnn

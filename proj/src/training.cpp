#include "stablegnn/training.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stablegnn {

using ad::Adam;
using ad::Tape;
using ad::Value;

namespace {

std::vector<int> model_dims(const Graph& g, const TrainConfig& cfg) {
  std::vector<int> dims;
  dims.push_back(g.feature_dim());
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(g.num_classes);
  return dims;
}

Rng dropout_rng(const TrainConfig& cfg, int epoch, int sub) {
  return Rng(Rng::derive(cfg.seed, rng_stream::kDropout, epoch, sub));
}

void check_finite_or_abort(const LossBreakdown& b, int epoch) {
  if (!std::isfinite(b.pred) || !std::isfinite(b.local) || !std::isfinite(b.global)) {
    throw std::runtime_error("training diverged at epoch " + std::to_string(epoch));
  }
}

}  // namespace

NodeTrainResult train_stable(const Graph& g, const PropGraph& pg, const EnvironmentSet& envs,
                             const TrainConfig& cfg) {
  if (envs.size() < 1) throw std::invalid_argument("train_stable: missing observational environment");
  const int k = envs.num_generated();
  NodeTrainResult result{
      init_node_model(ModelKind::Stable, cfg.weight_mode, model_dims(g, cfg), envs.size(),
                      cfg.input_dropout, cfg.feature_dropout, cfg.seed),
      {}};
  NodeModel& model = result.model;

  std::vector<ad::Parameter*> outer_params = model.backbone.params();
  for (auto* p : model.predictors[0].params()) outer_params.push_back(p);
  Adam outer(outer_params, cfg.adam(cfg.lr));
  std::vector<Adam> inner;
  for (int e = 1; e <= k; ++e) inner.emplace_back(model.predictors[e].params(), cfg.adam(cfg.inner_lr));

  const int layers = model.num_layers();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    CachedAlphas cached;
    if (k > 0) {
      // Phase (a): backbone frozen, fit each environment's predictor.
      model.backbone.set_frozen(true);
      for (int e = 1; e <= k; ++e) {
        for (int step = 0; step < cfg.inner_steps; ++step) {
          Tape t;
          Rng rng = dropout_rng(cfg, epoch, e * 1000 + step + 1);
          auto fwd = forward_backbone(t, pg, g.features, model, e, true, &rng);
          Value per_node = t.masked_cross_entropy(fwd.logits, g.labels, envs.masks[e]);
          Value loss = t.masked_mean(per_node, envs.masks[e]);
          t.backward(loss);
          inner[e - 1].step(t);
        }
        // Cache this environment's weights, dropout off so the cache is
        // deterministic; constants on the outer tape keep them gradient-inert.
        Tape t;
        auto fwd = forward_backbone(t, pg, g.features, model, e, false, nullptr);
        std::vector<Tensor> per_layer;
        per_layer.reserve(layers);
        for (auto a : fwd.alphas) per_layer.push_back(t.val(a));
        cached.push_back(std::move(per_layer));
      }
      model.backbone.set_frozen(false);
    }

    // Phase (b): one combined-objective step on backbone + observational
    // predictor.
    Tape t;
    Rng rng = dropout_rng(cfg, epoch, 0);
    auto fwd = forward_backbone(t, pg, g.features, model, 0, true, &rng);
    Value per_node = t.masked_cross_entropy(fwd.logits, g.labels, envs.masks[0]);
    Value pred = t.masked_mean(per_node, envs.masks[0]);

    Value local, global;
    LossBreakdown breakdown;
    if (k > 0) {
      local = local_regularizer(t, fwd.alphas, cached);
      auto sublosses = env_subloss(t, per_node, envs.masks);
      global = global_regularizer(t, sublosses);
      for (auto s : sublosses) breakdown.sublosses.push_back(t.val(s)[0]);
    }
    Value loss = combined_loss(t, pred, local, global, cfg.lambda0, cfg.lambda1, &breakdown);
    check_finite_or_abort(breakdown, epoch);
    t.backward(loss);
    outer.step(t);

    result.log.push_back(EpochLog{epoch, std::move(breakdown)});
  }
  return result;
}

NodeTrainResult train_baseline(const Graph& g, const PropGraph& pg, const Mask& train_mask,
                               const TrainConfig& cfg, ModelKind kind) {
  if (kind == ModelKind::Stable) {
    throw std::invalid_argument("train_baseline: use train_stable for the stable model");
  }
  NodeTrainResult result{init_node_model(kind, cfg.weight_mode, model_dims(g, cfg), 1,
                                         cfg.input_dropout, cfg.feature_dropout, cfg.seed),
                         {}};
  NodeModel& model = result.model;
  Adam opt(model.all_params(), cfg.adam(cfg.lr));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape t;
    Rng rng = dropout_rng(cfg, epoch, 0);
    auto fwd = forward_backbone(t, pg, g.features, model, 0, true, &rng);
    Value per_node = t.masked_cross_entropy(fwd.logits, g.labels, train_mask);
    Value loss = t.masked_mean(per_node, train_mask);
    LossBreakdown breakdown;
    breakdown.pred = t.val(loss)[0];
    check_finite_or_abort(breakdown, epoch);
    t.backward(loss);
    opt.step(t);
    result.log.push_back(EpochLog{epoch, std::move(breakdown)});
  }
  return result;
}

Tensor predict_logits(const PropGraph& pg, const Tensor& features, NodeModel& model, int env) {
  Tape t;
  auto fwd = forward_backbone(t, pg, features, model, env, false, nullptr);
  return t.val(fwd.logits);
}

}  // namespace stablegnn

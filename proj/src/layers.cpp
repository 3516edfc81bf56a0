#include "stablegnn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace stablegnn {

using ad::Tape;
using ad::Value;

std::vector<double> PropGraph::gcn_coeffs() const {
  std::vector<int> deg(num_nodes, 0);
  for (int i = 0; i < num_nodes; ++i) deg[i] = offsets[i + 1] - offsets[i];
  std::vector<double> coeffs(sources.size());
  for (size_t k = 0; k < sources.size(); ++k) {
    coeffs[k] = 1.0 / std::sqrt(static_cast<double>(deg[targets[k]]) *
                                static_cast<double>(deg[sources[k]]));
  }
  return coeffs;
}

PropGraph make_prop_graph(const Graph& g) {
  PropGraph pg;
  pg.num_nodes = g.num_nodes;
  pg.offsets.assign(g.num_nodes + 1, 0);
  // Count per-target entries, adding a self-loop where the graph lacks one.
  std::vector<char> has_self(g.num_nodes, 0);
  for (int i = 0; i < g.num_nodes; ++i) {
    for (int k = g.csr_offsets[i]; k < g.csr_offsets[i + 1]; ++k) {
      if (g.csr_neighbors[k] == i) has_self[i] = 1;
    }
  }
  for (int i = 0; i < g.num_nodes; ++i) {
    pg.offsets[i + 1] = pg.offsets[i] + g.degree(i) + (has_self[i] ? 0 : 1);
  }
  pg.sources.reserve(pg.offsets[g.num_nodes]);
  pg.targets.reserve(pg.offsets[g.num_nodes]);
  for (int i = 0; i < g.num_nodes; ++i) {
    bool self_added = false;
    for (int k = g.csr_offsets[i]; k < g.csr_offsets[i + 1]; ++k) {
      int j = g.csr_neighbors[k];
      if (!self_added && !has_self[i] && j > i) {
        pg.sources.push_back(i);
        pg.targets.push_back(i);
        self_added = true;
      }
      pg.sources.push_back(j);
      pg.targets.push_back(i);
    }
    if (!has_self[i] && !self_added) {
      pg.sources.push_back(i);
      pg.targets.push_back(i);
    }
  }
  return pg;
}

WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "softmax") return WeightMode::SoftmaxAttention;
  if (s == "sigmoid") return WeightMode::SigmoidAbsolute;
  throw std::invalid_argument("unknown weight mode: " + s);
}

std::string to_string(WeightMode m) {
  return m == WeightMode::SoftmaxAttention ? "softmax" : "sigmoid";
}

void BackboneParams::set_frozen(bool frozen) {
  for (auto& w : weights) w.requires_grad = !frozen;
}

std::vector<ad::Parameter*> BackboneParams::params() {
  std::vector<ad::Parameter*> out;
  for (auto& w : weights) out.push_back(&w);
  return out;
}

std::vector<ad::Parameter*> WeightPredictor::params() {
  std::vector<ad::Parameter*> out;
  for (auto& a : attn) out.push_back(&a);
  return out;
}

std::vector<ad::Parameter*> NodeModel::all_params() {
  std::vector<ad::Parameter*> out = backbone.params();
  for (auto& p : predictors) {
    for (auto* a : p.params()) out.push_back(a);
  }
  return out;
}

namespace {

// Per-edge attention input: a . [h_i || h_j] for edge (i <- j).
Value edge_logits(Tape& t, Value h, const PropGraph& pg, Value a) {
  Value hi = t.gather_rows(h, pg.targets);
  Value hj = t.gather_rows(h, pg.sources);
  Value cat = t.concat(hi, hj, 1);
  return t.matmul(cat, a);  // rank-1 a -> rank-1 logits [E]
}

Tensor glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor out = Tensor::zeros(std::move(shape));
  for (long i = 0; i < out.numel(); ++i) out[i] = rng.uniform(-limit, limit);
  return out;
}

}  // namespace

Value attention_edge_weights(Tape& t, Value h, const PropGraph& pg, Value a) {
  Value logits = edge_logits(t, h, pg, a);
  Value act = t.leaky_relu(logits, 0.2);
  return t.segment_softmax(act, pg.offsets);
}

Value sigmoid_edge_weights(Tape& t, Value h, const PropGraph& pg, Value a) {
  return t.sigmoid(edge_logits(t, h, pg, a));
}

Value edge_weights(Tape& t, WeightMode mode, Value h, const PropGraph& pg, Value a) {
  return mode == WeightMode::SoftmaxAttention ? attention_edge_weights(t, h, pg, a)
                                              : sigmoid_edge_weights(t, h, pg, a);
}

Value weighted_aggregate(Tape& t, Value h, const PropGraph& pg, Value alpha, bool apply_elu) {
  if (t.val(alpha).numel() != pg.num_edges()) {
    throw std::invalid_argument("weighted_aggregate: alpha length does not match edge count");
  }
  Value gathered = t.gather_rows(h, pg.sources);
  Value scaled = t.row_scale(gathered, alpha);
  Value agg = t.segment_sum(scaled, pg.offsets);
  return apply_elu ? t.elu(agg) : agg;
}

Value gcn_layer(Tape& t, Value h, const PropGraph& pg, Value w, bool final_layer) {
  Value z = t.matmul(h, w);
  Value coeffs = t.constant(Tensor::row_vector(pg.gcn_coeffs()), "gcn_coeffs");
  return weighted_aggregate(t, z, pg, coeffs, !final_layer);
}

NodeModel init_node_model(ModelKind kind, WeightMode mode, std::vector<int> dims,
                          int num_environments, double input_dropout, double feature_dropout,
                          std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("init_node_model: need at least one layer");
  NodeModel m;
  m.kind = kind;
  m.mode = mode;
  m.dims = std::move(dims);
  m.input_dropout = input_dropout;
  m.feature_dropout = feature_dropout;

  Rng rng(Rng::derive(seed, rng_stream::kInit));
  int layers = m.num_layers();
  for (int l = 0; l < layers; ++l) {
    int fin = m.dims[l], fout = m.dims[l + 1];
    m.backbone.weights.emplace_back(glorot({fin, fout}, fin, fout, rng),
                                    "W" + std::to_string(l));
  }
  if (kind != ModelKind::Gcn) {
    int envs = kind == ModelKind::Gat ? 1 : num_environments;
    for (int e = 0; e < envs; ++e) {
      WeightPredictor pred;
      pred.env = e;
      pred.mode = mode;
      for (int l = 0; l < layers; ++l) {
        int fout = m.dims[l + 1];
        pred.attn.emplace_back(glorot({2 * fout}, 2 * fout, 1, rng),
                               "a_e" + std::to_string(e) + "_l" + std::to_string(l));
      }
      m.predictors.push_back(std::move(pred));
    }
  }
  return m;
}

BackboneForward forward_backbone(Tape& t, const PropGraph& pg, const Tensor& features,
                                 NodeModel& model, int env, bool training, Rng* dropout_rng) {
  if (model.kind != ModelKind::Gcn &&
      (env < 0 || env >= static_cast<int>(model.predictors.size()))) {
    throw std::invalid_argument("forward_backbone: no predictor for environment " +
                                std::to_string(env));
  }
  bool drop = training && (model.input_dropout > 0 || model.feature_dropout > 0);
  if (drop && dropout_rng == nullptr) {
    throw std::invalid_argument("forward_backbone: training with dropout needs an RNG");
  }
  Rng unused(0);
  Rng& rng = dropout_rng ? *dropout_rng : unused;

  BackboneForward out;
  Value h = t.constant(features, "features");
  h = t.dropout(h, model.input_dropout, rng, training);
  int layers = model.num_layers();
  for (int l = 0; l < layers; ++l) {
    bool final_layer = l == layers - 1;
    Value w = t.param(model.backbone.weights[l]);
    if (model.kind == ModelKind::Gcn) {
      h = gcn_layer(t, h, pg, w, final_layer);
    } else {
      Value z = t.matmul(h, w);
      Value a = t.param(model.predictors[env].attn[l]);
      Value alpha = edge_weights(t, model.mode, z, pg, a);
      out.alphas.push_back(alpha);
      h = weighted_aggregate(t, z, pg, alpha, !final_layer);
    }
    if (!final_layer) h = t.dropout(h, model.feature_dropout, rng, training);
  }
  out.logits = h;
  return out;
}

}  // namespace stablegnn

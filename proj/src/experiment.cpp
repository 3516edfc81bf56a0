#include "stablegnn/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stablegnn {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_tau(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

[[noreturn]] void config_error(const std::string& field, const std::string& why) {
  throw std::invalid_argument("config error: " + field + ": " + why);
}

bool is_rec(const ExperimentConfig& cfg) {
  return cfg.dataset == "rec-synthetic" ||
         (cfg.dataset == "files" && !cfg.interactions_path.empty());
}

std::string canonical_string(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "dataset=" << c.dataset << ";edges=" << c.edges_path << ";features=" << c.features_path
     << ";labels=" << c.labels_path << ";attrs=" << c.attrs_path
     << ";interactions=" << c.interactions_path << ";models=";
  for (const auto& m : c.models) os << m << ",";
  os << ";bias=" << c.bias_factor << ";tau_train=" << fmt_double(c.tau_train) << ";tau_test=";
  for (double t : c.tau_test) os << fmt_double(t) << ",";
  os << ";k=" << c.k_envs << ";l0=" << fmt_double(c.lambda0) << ";l1=" << fmt_double(c.lambda1)
     << ";epochs=" << c.epochs << ";inner_steps=" << c.inner_steps << ";hidden=" << c.hidden
     << ";layers=" << c.layers << ";lr=" << fmt_double(c.lr)
     << ";inner_lr=" << fmt_double(c.inner_lr) << ";dropout=" << fmt_double(c.dropout)
     << ";input_dropout=" << fmt_double(c.input_dropout)
     << ";weight_decay=" << fmt_double(c.weight_decay) << ";mode=" << c.weight_mode
     << ";ndcg_n=" << c.ndcg_n << ";eval_mode=" << c.eval_mode << ";syn=" << c.syn_nodes << ","
     << c.syn_classes << "," << c.syn_features << "," << fmt_double(c.syn_intra) << ","
     << fmt_double(c.syn_inter) << "," << fmt_double(c.syn_signal) << ";rec=" << c.rec_users
     << "," << c.rec_items << "," << c.rec_inter_per_user << "," << c.rec_eval_per_user << ","
     << c.rec_eval_days << "," << c.embedding_dim;
  return os.str();
}

}  // namespace

void apply_defaults(ExperimentConfig& cfg) {
  bool rec = is_rec(cfg);
  if (rec && cfg.models == std::vector<std::string>{"stable", "gat"}) {
    cfg.models = {"stable-rec", "ngcf-rec"};
  }
  if (cfg.dataset == "files" && !rec) {
    // Citeseer-style defaults (appendix values for the named dataset).
    if (cfg.epochs < 0) cfg.epochs = 200;
    if (cfg.hidden < 0) cfg.hidden = 8;
    if (cfg.layers < 0) cfg.layers = 2;
    if (cfg.lr < 0) cfg.lr = 0.005;
    if (cfg.dropout < 0) cfg.dropout = 0.6;
    if (cfg.input_dropout < 0) cfg.input_dropout = 0.1;
    if (cfg.weight_decay < 0) cfg.weight_decay = 5e-4;
  } else if (!rec) {
    if (cfg.epochs < 0) cfg.epochs = 200;
    if (cfg.hidden < 0) cfg.hidden = 16;
    if (cfg.layers < 0) cfg.layers = 2;
    if (cfg.lr < 0) cfg.lr = 0.005;
    if (cfg.dropout < 0) cfg.dropout = 0.0;
    if (cfg.input_dropout < 0) cfg.input_dropout = 0.0;
    if (cfg.weight_decay < 0) cfg.weight_decay = 0.0;
  } else {
    if (cfg.epochs < 0) cfg.epochs = 30;
    if (cfg.layers < 0) cfg.layers = 3;
    if (cfg.embedding_dim < 0) cfg.embedding_dim = 64;
    if (cfg.lr < 0) cfg.lr = 0.005;
    if (cfg.dropout < 0) cfg.dropout = 0.0;
    if (cfg.input_dropout < 0) cfg.input_dropout = 0.0;
    if (cfg.weight_decay < 0) cfg.weight_decay = 1e-3;
    if (cfg.hidden < 0) cfg.hidden = 16;  // unused by the recommender
    if (cfg.bias_factor == "label") cfg.bias_factor = "attr:gender=M";
  }
  if (cfg.inner_lr < 0) cfg.inner_lr = cfg.lr;
  if (cfg.embedding_dim < 0) cfg.embedding_dim = 64;
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.dataset != "synthetic" && cfg.dataset != "files" && cfg.dataset != "rec-synthetic") {
    config_error("dataset", "must be synthetic, files, or rec-synthetic, got " + cfg.dataset);
  }
  if (cfg.dataset == "files" && cfg.interactions_path.empty() &&
      (cfg.edges_path.empty() || cfg.features_path.empty() || cfg.labels_path.empty())) {
    config_error("edges/features/labels", "files dataset needs the three node-graph paths");
  }
  if (cfg.tau_train < 0 || cfg.tau_train > 1) config_error("tau_train", "must be in [0,1]");
  for (double t : cfg.tau_test) {
    if (t < 0 || t > 1) config_error("tau_test", "every value must be in [0,1]");
  }
  if (cfg.tau_test.empty() && cfg.eval_mode == "sweep") config_error("tau_test", "empty sweep");
  if (cfg.k_envs < 0) config_error("k_envs", "must be >= 0");
  if (cfg.lambda0 < 0 || cfg.lambda1 < 0) config_error("lambda0/lambda1", "must be >= 0");
  if (cfg.epochs < 1) config_error("epochs", "must be >= 1");
  if (cfg.inner_steps < 1) config_error("inner_steps", "must be >= 1");
  if (cfg.hidden < 1) config_error("hidden", "must be >= 1");
  if (cfg.layers < 1) config_error("layers", "must be >= 1");
  if (cfg.lr <= 0) config_error("lr", "must be > 0");
  if (cfg.dropout < 0 || cfg.dropout >= 1) config_error("dropout", "must be in [0,1)");
  if (cfg.input_dropout < 0 || cfg.input_dropout >= 1) config_error("input_dropout", "must be in [0,1)");
  if (cfg.ndcg_n < 1) config_error("ndcg_n", "must be >= 1");
  if (cfg.eval_mode != "sweep" && cfg.eval_mode != "days") config_error("eval_mode", "sweep or days");
  if (cfg.seeds.empty()) config_error("seed", "need at least one seed");
  if (cfg.models.empty()) config_error("model", "need at least one model");
  bool rec = is_rec(cfg);
  for (const auto& m : cfg.models) {
    bool node_model = m == "stable" || m == "gat" || m == "gcn";
    bool rec_model = m == "stable-rec" || m == "ngcf-rec";
    if (!node_model && !rec_model) config_error("model", "unknown model " + m);
    if (rec && node_model) config_error("model", m + " is not a recommendation model");
    if (!rec && rec_model) config_error("model", m + " needs a recommendation dataset");
  }
  weight_mode_from_string(cfg.weight_mode);
  parse_bias(cfg);
}

void apply_key_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  auto as_int = [&](const char* field) {
    try {
      return std::stoi(value);
    } catch (...) {
      config_error(field, "not an integer: " + value);
    }
  };
  auto as_double = [&](const char* field) {
    try {
      return std::stod(value);
    } catch (...) {
      config_error(field, "not a number: " + value);
    }
  };
  if (key == "dataset") cfg.dataset = value;
  else if (key == "edges") cfg.edges_path = value;
  else if (key == "features") cfg.features_path = value;
  else if (key == "labels") cfg.labels_path = value;
  else if (key == "attrs") cfg.attrs_path = value;
  else if (key == "interactions") cfg.interactions_path = value;
  else if (key == "model") {
    cfg.models.clear();
    std::istringstream ss(value);
    std::string m;
    while (std::getline(ss, m, ',')) cfg.models.push_back(m);
  } else if (key == "bias-factor") cfg.bias_factor = value;
  else if (key == "tau-train") cfg.tau_train = as_double("tau-train");
  else if (key == "tau-test") {
    cfg.tau_test.clear();
    std::istringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) cfg.tau_test.push_back(std::stod(tok));
    }
  } else if (key == "k-envs") cfg.k_envs = as_int("k-envs");
  else if (key == "lambda0") cfg.lambda0 = as_double("lambda0");
  else if (key == "lambda1") cfg.lambda1 = as_double("lambda1");
  else if (key == "epochs") cfg.epochs = as_int("epochs");
  else if (key == "inner-steps") cfg.inner_steps = as_int("inner-steps");
  else if (key == "hidden") cfg.hidden = as_int("hidden");
  else if (key == "layers") cfg.layers = as_int("layers");
  else if (key == "lr") cfg.lr = as_double("lr");
  else if (key == "inner-lr") cfg.inner_lr = as_double("inner-lr");
  else if (key == "dropout") cfg.dropout = as_double("dropout");
  else if (key == "input-dropout") cfg.input_dropout = as_double("input-dropout");
  else if (key == "weight-decay") cfg.weight_decay = as_double("weight-decay");
  else if (key == "weight-mode") cfg.weight_mode = value;
  else if (key == "seed") {
    cfg.seeds.clear();
    std::istringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) cfg.seeds.push_back(std::stoull(tok));
    }
  } else if (key == "ndcg-n") cfg.ndcg_n = as_int("ndcg-n");
  else if (key == "eval-mode") cfg.eval_mode = value;
  else if (key == "out") cfg.out_dir = value;
  else if (key == "syn-nodes") cfg.syn_nodes = as_int("syn-nodes");
  else if (key == "syn-classes") cfg.syn_classes = as_int("syn-classes");
  else if (key == "syn-features") cfg.syn_features = as_int("syn-features");
  else if (key == "syn-intra") cfg.syn_intra = as_double("syn-intra");
  else if (key == "syn-inter") cfg.syn_inter = as_double("syn-inter");
  else if (key == "syn-signal") cfg.syn_signal = as_double("syn-signal");
  else if (key == "rec-users") cfg.rec_users = as_int("rec-users");
  else if (key == "rec-items") cfg.rec_items = as_int("rec-items");
  else if (key == "rec-inter-per-user") cfg.rec_inter_per_user = as_int("rec-inter-per-user");
  else if (key == "rec-eval-per-user") cfg.rec_eval_per_user = as_int("rec-eval-per-user");
  else if (key == "rec-eval-days") cfg.rec_eval_days = as_int("rec-eval-days");
  else if (key == "embedding-dim") cfg.embedding_dim = as_int("embedding-dim");
  else config_error(key, "unknown config key");
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    apply_key_value(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical_string(cfg))));
  return buf;
}

BiasSpec parse_bias(const ExperimentConfig& cfg) {
  BiasSpec spec;
  spec.tau = cfg.tau_train;
  const std::string& f = cfg.bias_factor;
  if (f == "label") {
    spec.factor = BiasSpec::Factor::LabelThreshold;
    spec.label_threshold = -1;  // median
  } else if (f.rfind("label:", 0) == 0) {
    spec.factor = BiasSpec::Factor::LabelThreshold;
    spec.label_threshold = std::stoi(f.substr(6));
  } else if (f.rfind("attr:", 0) == 0) {
    auto eq = f.find('=', 5);
    if (eq == std::string::npos) config_error("bias-factor", "expected attr:NAME=VALUE");
    spec.factor = BiasSpec::Factor::Attribute;
    spec.attr_name = f.substr(5, eq - 5);
    spec.privileged_value = f.substr(eq + 1);
    if (spec.attr_name.empty() || spec.privileged_value.empty()) {
      config_error("bias-factor", "expected attr:NAME=VALUE");
    }
  } else {
    config_error("bias-factor", "expected label, label:T, or attr:NAME=VALUE, got " + f);
  }
  return spec;
}

TrainConfig make_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.lambda0 = cfg.lambda0;
  tc.lambda1 = cfg.lambda1;
  tc.lr = cfg.lr;
  tc.inner_lr = cfg.inner_lr;
  tc.weight_decay = cfg.weight_decay;
  tc.epochs = cfg.epochs;
  tc.inner_steps = cfg.inner_steps;
  tc.num_generated_envs = cfg.k_envs;
  tc.seed = seed;
  tc.weight_mode = weight_mode_from_string(cfg.weight_mode);
  tc.hidden.assign(std::max(0, cfg.layers - 1), cfg.hidden);
  tc.input_dropout = cfg.input_dropout;
  tc.feature_dropout = cfg.dropout;
  tc.embedding_dim = cfg.embedding_dim;
  tc.rec_layers = cfg.layers;
  return tc;
}

std::string report_to_json(const ScoreReport& r) {
  json j;
  j["metadata"] = {{"metric", r.metric},
                   {"model", r.model},
                   {"seed", r.seed},
                   {"config_hash", r.config_hash}};
  j["entries"] = json::array();
  for (const auto& e : r.entries) j["entries"].push_back({{"env", e.env}, {"score", e.score}});
  j["average_score"] = r.avg;
  j["stability_error"] = r.stability;
  return j.dump(2) + "\n";
}

ScoreReport report_from_json(const std::string& text) {
  json j = json::parse(text);
  ScoreReport r;
  r.metric = j["metadata"]["metric"].get<std::string>();
  r.model = j["metadata"]["model"].get<std::string>();
  r.seed = j["metadata"]["seed"].get<std::uint64_t>();
  r.config_hash = j["metadata"]["config_hash"].get<std::string>();
  for (const auto& e : j["entries"]) {
    r.entries.push_back({e["env"].get<std::string>(), e["score"].get<double>()});
  }
  r.avg = j["average_score"].get<double>();
  r.stability = j["stability_error"].get<double>();
  return r;
}

void write_report_files(const ScoreReport& r, const std::string& json_path,
                        const std::string& csv_path) {
  {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write " + json_path);
    out << report_to_json(r);
  }
  {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot write " + csv_path);
    out << "env,score\n";
    for (const auto& e : r.entries) out << e.env << "," << fmt_double(e.score) << "\n";
  }
}

ScoreReport evaluate_sweep_node(NodeModel& model, const Graph& g, const PropGraph& pg,
                                const std::vector<Mask>& test_masks,
                                const std::vector<std::string>& env_names, std::uint64_t seed,
                                const std::string& hash, const std::string& model_name) {
  Tensor logits = predict_logits(pg, g.features, model, 0);
  std::vector<ScoreEntry> entries;
  entries.reserve(test_masks.size());
  for (size_t i = 0; i < test_masks.size(); ++i) {
    entries.push_back({env_names[i], accuracy(logits, g.labels, test_masks[i])});
  }
  return make_report("accuracy", model_name, seed, hash, std::move(entries));
}

ScoreReport evaluate_sweep_rec(RecModel& model, const BipartiteAdj& adj,
                               const std::vector<RelevanceSets>& relevant_per_env,
                               const std::vector<Mask>& test_user_masks,
                               const std::vector<std::string>& env_names, int ndcg_n,
                               std::uint64_t seed, const std::string& hash,
                               const std::string& model_name) {
  if (relevant_per_env.size() != test_user_masks.size()) {
    throw std::invalid_argument("evaluate_sweep_rec: one relevance set per environment required");
  }
  RecProp prop = make_rec_prop(adj);
  auto [user_emb, item_emb] = rec_final_embeddings(model, adj, prop, 0);
  std::vector<std::vector<int>> exclude(adj.num_users);
  for (auto [u, i] : adj.edges) exclude[u].push_back(i);
  RankingResult ranking = recommend_topn(user_emb, item_emb, exclude, ndcg_n);
  std::vector<ScoreEntry> entries;
  entries.reserve(test_user_masks.size());
  for (size_t i = 0; i < test_user_masks.size(); ++i) {
    ranking.relevant = relevant_per_env[i];
    entries.push_back({env_names[i], ndcg_at_n(ranking, ndcg_n, &test_user_masks[i])});
  }
  return make_report("ndcg@" + std::to_string(ndcg_n), model_name, seed, hash,
                     std::move(entries));
}

namespace {

json params_to_json(const std::vector<ad::Parameter*>& params) {
  json out = json::object();
  for (const auto* p : params) {
    out[p->name] = {{"shape", p->value.shape()}, {"values", p->value.data()}};
  }
  return out;
}

void params_from_json(const json& j, const std::vector<ad::Parameter*>& params) {
  for (auto* p : params) {
    if (!j.contains(p->name)) {
      throw std::runtime_error("checkpoint missing parameter " + p->name);
    }
    auto shape = j[p->name]["shape"].get<std::vector<int>>();
    auto values = j[p->name]["values"].get<std::vector<double>>();
    p->value = Tensor(std::move(shape), std::move(values));
  }
}

}  // namespace

void save_node_checkpoint(NodeModel& model, const std::string& path) {
  json j;
  j["kind"] = "node";
  j["model_kind"] = model.kind == ModelKind::Stable ? "stable"
                    : model.kind == ModelKind::Gat  ? "gat"
                                                    : "gcn";
  j["weight_mode"] = to_string(model.mode);
  j["dims"] = model.dims;
  j["num_envs"] = model.predictors.size();
  j["input_dropout"] = model.input_dropout;
  j["feature_dropout"] = model.feature_dropout;
  j["params"] = params_to_json(model.all_params());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

NodeModel load_node_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  json j = json::parse(in);
  if (j["kind"] != "node") throw std::runtime_error(path + " is not a node checkpoint");
  std::string mk = j["model_kind"].get<std::string>();
  ModelKind kind = mk == "stable" ? ModelKind::Stable : mk == "gat" ? ModelKind::Gat : ModelKind::Gcn;
  NodeModel model = init_node_model(kind, weight_mode_from_string(j["weight_mode"]),
                                    j["dims"].get<std::vector<int>>(),
                                    j["num_envs"].get<int>(), j["input_dropout"].get<double>(),
                                    j["feature_dropout"].get<double>(), 0);
  params_from_json(j["params"], model.all_params());
  return model;
}

void save_rec_checkpoint(RecModel& model, const std::string& path) {
  json j;
  j["kind"] = "rec";
  j["num_users"] = model.num_users;
  j["num_items"] = model.num_items;
  j["dim"] = model.dim;
  j["layers"] = model.layers;
  j["num_envs"] = model.attn.size();
  j["concat_layer_outputs"] = model.concat_layer_outputs;
  j["params"] = params_to_json(model.all_params());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

RecModel load_rec_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  json j = json::parse(in);
  if (j["kind"] != "rec") throw std::runtime_error(path + " is not a recommender checkpoint");
  RecModel model = init_rec_model(j["num_users"].get<int>(), j["num_items"].get<int>(),
                                  j["dim"].get<int>(), j["layers"].get<int>(),
                                  j["num_envs"].get<int>(),
                                  j["concat_layer_outputs"].get<bool>(), 0);
  params_from_json(j["params"], model.all_params());
  return model;
}

namespace {

struct NodeData {
  Graph g;
  PropGraph pg;
  EnvironmentSet envs;
  std::vector<Mask> test_masks;
  std::vector<std::string> env_names;
};

NodeData prepare_node_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  NodeData d;
  if (cfg.dataset == "synthetic") {
    SyntheticSpec spec;
    spec.num_nodes = cfg.syn_nodes;
    spec.num_classes = cfg.syn_classes;
    spec.feature_dim = cfg.syn_features;
    spec.intra_edge_prob = cfg.syn_intra;
    spec.inter_edge_prob = cfg.syn_inter;
    spec.class_signal = cfg.syn_signal;
    spec.seed = seed;
    d.g = generate_synthetic(spec);
  } else {
    d.g = load_graph(cfg.edges_path, cfg.features_path, cfg.labels_path, cfg.attrs_path);
  }
  d.pg = make_prop_graph(d.g);

  // Half the nodes form the training candidate pool, half the testing pool.
  std::vector<int> order(d.g.num_nodes);
  for (int i = 0; i < d.g.num_nodes; ++i) order[i] = i;
  Rng split_rng(Rng::derive(seed, rng_stream::kSplit));
  for (int i = d.g.num_nodes - 1; i > 0; --i) {
    int j = static_cast<int>(split_rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  int half = d.g.num_nodes / 2;
  std::vector<int> train_pool(order.begin(), order.begin() + half);
  std::vector<int> test_pool(order.begin() + half, order.end());

  BiasSpec bias = parse_bias(cfg);
  Mask obs = biased_select(d.g, train_pool, bias, cfg.tau_train,
                           Rng::derive(seed, rng_stream::kSelection, 0));
  std::vector<int> train_nodes = mask_to_indices(obs);
  if (train_nodes.empty()) throw std::runtime_error("observational environment is empty");

  d.envs = build_environments(d.g, train_nodes, bias, cfg.k_envs, seed);
  d.test_masks = make_test_environments(d.g, test_pool, bias, cfg.tau_test, seed);
  for (double t : cfg.tau_test) d.env_names.push_back(fmt_tau(t));
  return d;
}

struct RecData {
  BipartiteGraph b;
  BipartiteAdj adj;
  EnvironmentSet user_envs;
  std::vector<RelevanceSets> relevant;  // one per test environment
  std::vector<Mask> test_masks;
  std::vector<std::string> env_names;
};

// Relevance = the day's items minus the training-day interactions. Trained
// positives are excluded from the candidate lists, so leaving them in the
// relevance sets would cap the reachable score of exactly the users with the
// most observed history.
std::vector<std::vector<int>> relevance_for_day(const BipartiteGraph& b, int day, int train_day) {
  std::vector<std::set<int>> train_sets(b.num_users);
  for (const auto& it : b.interactions) {
    if (it.env == train_day) train_sets[it.user].insert(it.item);
  }
  std::vector<std::set<int>> sets(b.num_users);
  for (const auto& it : b.interactions) {
    if (it.env == day && train_sets[it.user].count(it.item) == 0) sets[it.user].insert(it.item);
  }
  std::vector<std::vector<int>> out(b.num_users);
  for (int u = 0; u < b.num_users; ++u) out[u].assign(sets[u].begin(), sets[u].end());
  return out;
}

RecData prepare_rec_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  RecData d;
  BiasSpec bias = parse_bias(cfg);
  if (bias.factor != BiasSpec::Factor::Attribute) {
    config_error("bias-factor", "recommendation experiments need attr:NAME=VALUE");
  }
  if (cfg.dataset == "rec-synthetic") {
    SyntheticRecSpec spec;
    spec.num_users = cfg.rec_users;
    spec.num_items = cfg.rec_items;
    spec.interactions_per_user = cfg.rec_inter_per_user;
    spec.eval_interactions_per_user = cfg.rec_eval_per_user;
    spec.eval_days = cfg.rec_eval_days;
    spec.bias_attr = bias.attr_name;
    spec.privileged_value = bias.privileged_value;
    spec.train_bias_tau = cfg.tau_train;
    spec.seed = seed;
    d.b = generate_synthetic_bipartite(spec);
  } else {
    d.b = load_interactions(cfg.interactions_path);
    if (!cfg.attrs_path.empty()) {
      // User attribute file shares the node-attribute CSV format.
      std::ifstream probe(cfg.attrs_path);
      if (!probe) throw std::runtime_error("cannot open " + cfg.attrs_path);
      std::string line;
      std::getline(probe, line);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::istringstream hs(line);
      std::vector<std::string> header;
      std::string tok;
      while (std::getline(hs, tok, ',')) header.push_back(tok);
      if (header.empty() || header[0] != "node_id") {
        throw std::runtime_error(cfg.attrs_path + ": header must start with node_id");
      }
      for (size_t c = 1; c < header.size(); ++c) {
        d.b.user_attributes[header[c]].assign(d.b.num_users, "");
      }
      int line_no = 1;
      while (std::getline(probe, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<std::string> fields;
        while (std::getline(ls, tok, ',')) fields.push_back(tok);
        if (fields.size() != header.size()) {
          throw std::runtime_error(cfg.attrs_path + ":" + std::to_string(line_no) +
                                   ": wrong field count");
        }
        int id = std::stoi(fields[0]);
        if (id < 0 || id >= d.b.num_users) continue;  // attrs for unseen users are ignored
        for (size_t c = 1; c < header.size(); ++c) d.b.user_attributes[header[c]][id] = fields[c];
      }
    }
  }
  if (d.b.env_tags.size() < 2) {
    throw std::runtime_error("recommendation data needs a training day and an evaluation day");
  }
  int train_day = d.b.env_tags[0];
  d.adj = build_bipartite_adj(d.b, train_day);
  d.user_envs = build_user_environments(d.b, bias, cfg.k_envs, seed);

  std::vector<int> all_users(d.b.num_users);
  for (int u = 0; u < d.b.num_users; ++u) all_users[u] = u;
  if (cfg.eval_mode == "days") {
    for (size_t t = 1; t < d.b.env_tags.size(); ++t) {
      d.test_masks.push_back(Mask(d.b.num_users, 1));
      d.env_names.push_back("day" + std::to_string(d.b.env_tags[t]));
      d.relevant.push_back(relevance_for_day(d.b, d.b.env_tags[t], train_day));
    }
  } else {
    RelevanceSets day_one = relevance_for_day(d.b, d.b.env_tags[1], train_day);
    for (size_t i = 0; i < cfg.tau_test.size(); ++i) {
      d.test_masks.push_back(biased_select_by_attribute(
          d.b, all_users, bias.attr_name, bias.privileged_value, cfg.tau_test[i],
          Rng::derive(seed, rng_stream::kSelection, 2000 + i)));
      d.env_names.push_back(fmt_tau(cfg.tau_test[i]));
      d.relevant.push_back(day_one);
    }
  }
  return d;
}

void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  size_t num_subs = log.empty() ? 0 : log.front().losses.sublosses.size();
  out << "epoch,pred,local,global";
  for (size_t e = 0; e < num_subs; ++e) out << ",sub" << e;
  out << "\n";
  for (const auto& entry : log) {
    out << entry.epoch << "," << fmt_double(entry.losses.pred) << ","
        << fmt_double(entry.losses.local) << "," << fmt_double(entry.losses.global);
    for (double s : entry.losses.sublosses) out << "," << fmt_double(s);
    out << "\n";
  }
}

std::string out_path(const ExperimentConfig& cfg, const std::string& stem) {
  return (std::filesystem::path(cfg.out_dir) / stem).string();
}

}  // namespace

RunOutputs run_experiment(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  apply_defaults(cfg);
  validate_config(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  std::string hash = config_hash(cfg);

  RunOutputs outputs;
  for (std::uint64_t seed : cfg.seeds) {
    if (!is_rec(cfg)) {
      NodeData data = prepare_node_data(cfg, seed);
      for (const auto& name : cfg.models) {
        TrainConfig tc = make_train_config(cfg, seed);
        NodeTrainResult trained =
            name == "stable"
                ? train_stable(data.g, data.pg, data.envs, tc)
                : train_baseline(data.g, data.pg, data.envs.masks[0], tc,
                                 name == "gat" ? ModelKind::Gat : ModelKind::Gcn);
        ScoreReport report = evaluate_sweep_node(trained.model, data.g, data.pg, data.test_masks,
                                                 data.env_names, seed, hash, name);
        std::string stem = name + "_seed" + std::to_string(seed);
        write_report_files(report, out_path(cfg, "report_" + stem + ".json"),
                           out_path(cfg, "report_" + stem + ".csv"));
        write_train_log(trained.log, out_path(cfg, "train_log_" + stem + ".csv"));
        save_node_checkpoint(trained.model, out_path(cfg, "checkpoint_" + stem + ".json"));
        outputs.report_paths.push_back(out_path(cfg, "report_" + stem + ".json"));
      }
    } else {
      RecData data = prepare_rec_data(cfg, seed);
      for (const auto& name : cfg.models) {
        TrainConfig tc = make_train_config(cfg, seed);
        RecTrainResult trained = name == "stable-rec"
                                     ? train_stable_recommender(data.adj, data.user_envs, tc)
                                     : train_baseline_recommender(data.adj, tc);
        ScoreReport report =
            evaluate_sweep_rec(trained.model, data.adj, data.relevant, data.test_masks,
                               data.env_names, cfg.ndcg_n, seed, hash, name);
        std::string stem = name + "_seed" + std::to_string(seed);
        write_report_files(report, out_path(cfg, "report_" + stem + ".json"),
                           out_path(cfg, "report_" + stem + ".csv"));
        write_train_log(trained.log, out_path(cfg, "train_log_" + stem + ".csv"));
        save_rec_checkpoint(trained.model, out_path(cfg, "checkpoint_" + stem + ".json"));
        outputs.report_paths.push_back(out_path(cfg, "report_" + stem + ".json"));
      }
    }
  }
  return outputs;
}

std::string evaluate_checkpoint(const ExperimentConfig& cfg_in, const std::string& checkpoint_path) {
  ExperimentConfig cfg = cfg_in;
  apply_defaults(cfg);
  validate_config(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  std::string hash = config_hash(cfg);
  std::uint64_t seed = cfg.seeds.front();

  std::ifstream in(checkpoint_path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + checkpoint_path);
  json j = json::parse(in);
  std::string kind = j["kind"].get<std::string>();

  ScoreReport report;
  std::string stem;
  if (kind == "node") {
    NodeModel model = load_node_checkpoint(checkpoint_path);
    NodeData data = prepare_node_data(cfg, seed);
    report = evaluate_sweep_node(model, data.g, data.pg, data.test_masks, data.env_names, seed,
                                 hash, j["model_kind"].get<std::string>());
    stem = "eval_" + j["model_kind"].get<std::string>() + "_seed" + std::to_string(seed);
  } else {
    RecModel model = load_rec_checkpoint(checkpoint_path);
    RecData data = prepare_rec_data(cfg, seed);
    report = evaluate_sweep_rec(model, data.adj, data.relevant, data.test_masks, data.env_names,
                                cfg.ndcg_n, seed, hash, "checkpoint");
    stem = "eval_rec_seed" + std::to_string(seed);
  }
  std::string json_path = out_path(cfg, "report_" + stem + ".json");
  write_report_files(report, json_path, out_path(cfg, "report_" + stem + ".csv"));
  return json_path;
}

}  // namespace stablegnn

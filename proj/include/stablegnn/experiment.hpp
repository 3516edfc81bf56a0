#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stablegnn/metrics.hpp"
#include "stablegnn/recommender.hpp"
#include "stablegnn/synthetic.hpp"
#include "stablegnn/training.hpp"

namespace stablegnn {

// Full experiment description. Negative numeric fields mean "unset" and are
// resolved by apply_defaults() per dataset; precedence is CLI flag > config
// file > dataset default.
struct ExperimentConfig {
  std::string dataset = "synthetic";  // synthetic | files | rec-synthetic
  std::string edges_path, features_path, labels_path, attrs_path, interactions_path;
  std::vector<std::string> models = {"stable", "gat"};

  std::string bias_factor = "label";  // "label" | "label:T" | "attr:NAME=VALUE"
  double tau_train = 0.8;
  std::vector<double> tau_test = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int k_envs = 2;

  double lambda0 = 1.0;
  double lambda1 = 1.0;
  int epochs = -1;
  int inner_steps = 1;
  int hidden = -1;
  int layers = -1;
  double lr = -1.0;
  double inner_lr = -1.0;
  double dropout = -1.0;
  double input_dropout = -1.0;
  double weight_decay = -1.0;
  std::string weight_mode = "softmax";
  std::vector<std::uint64_t> seeds = {0};
  int ndcg_n = 100;
  std::string eval_mode = "sweep";  // sweep | days (recommendation only)
  std::string out_dir = "out";

  // Synthetic data shapes.
  int syn_nodes = 2000;
  int syn_classes = 2;
  int syn_features = 128;
  double syn_intra = 0.02;
  double syn_inter = 0.002;
  double syn_signal = 1.0;
  int rec_users = 500;
  int rec_items = 800;
  int rec_inter_per_user = 12;
  int rec_eval_per_user = 10;
  int rec_eval_days = 2;
  int embedding_dim = -1;
};

// Fills unset fields from the dataset's default table.
void apply_defaults(ExperimentConfig& cfg);

// Throws with the offending field name on invalid values.
void validate_config(const ExperimentConfig& cfg);

// key=value lines; '#' comments. Keys mirror the CLI flag names.
void apply_config_file(ExperimentConfig& cfg, const std::string& path);
void apply_key_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

std::string config_hash(const ExperimentConfig& cfg);
BiasSpec parse_bias(const ExperimentConfig& cfg);
TrainConfig make_train_config(const ExperimentConfig& cfg, std::uint64_t seed);

// Report serialization; parse(emit(r)) == r.
std::string report_to_json(const ScoreReport& r);
ScoreReport report_from_json(const std::string& text);
void write_report_files(const ScoreReport& r, const std::string& json_path,
                        const std::string& csv_path);

// Inference plus one score per test environment; the model is not modified.
ScoreReport evaluate_sweep_node(NodeModel& model, const Graph& g, const PropGraph& pg,
                                const std::vector<Mask>& test_masks,
                                const std::vector<std::string>& env_names, std::uint64_t seed,
                                const std::string& hash, const std::string& model_name);

// Per-user sorted relevance sets for one test environment.
using RelevanceSets = std::vector<std::vector<int>>;

// relevant_per_env holds one RelevanceSets per test environment (the tau
// sweep reuses one evaluation day; day-based environments differ per day).
ScoreReport evaluate_sweep_rec(RecModel& model, const BipartiteAdj& adj,
                               const std::vector<RelevanceSets>& relevant_per_env,
                               const std::vector<Mask>& test_user_masks,
                               const std::vector<std::string>& env_names, int ndcg_n,
                               std::uint64_t seed, const std::string& hash,
                               const std::string& model_name);

// Checkpoints: a generic named-parameter dump plus the shape metadata needed
// to rebuild the model.
void save_node_checkpoint(NodeModel& model, const std::string& path);
NodeModel load_node_checkpoint(const std::string& path);
void save_rec_checkpoint(RecModel& model, const std::string& path);
RecModel load_rec_checkpoint(const std::string& path);

struct RunOutputs {
  std::vector<std::string> report_paths;
};

// Loads or generates data, builds environments, trains every requested model,
// evaluates the sweep, and writes reports, logs, and checkpoints; fully
// deterministic per (config, seed).
RunOutputs run_experiment(const ExperimentConfig& cfg);

// Re-evaluates a saved checkpoint on the configured data and writes a report.
std::string evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path);

}  // namespace stablegnn

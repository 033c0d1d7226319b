#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsaf/checkpoint.hpp"
#include "dsaf/clustering.hpp"
#include "dsaf/data.hpp"
#include "dsaf/eval.hpp"
#include "dsaf/losses.hpp"
#include "dsaf/model.hpp"
#include "dsaf/optim.hpp"

namespace dsaf {

enum class RunMode { unDG, supervisedDG, UDAwoSL };

std::string to_string(RunMode m);
RunMode parse_run_mode(const std::string& name);

// DBSCAN settings used for pseudo-labels. When epsilon_quantile is positive the
// radius is recomputed every epoch as that quantile of the domain's pairwise
// feature distances, and `dbscan.epsilon` is ignored.
struct ClusterSettings {
  DbscanConfig dbscan;
  double epsilon_quantile = 0.0;

  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 50;
  // Per domain and epoch; 0 means ceil(train samples / batch size).
  std::size_t iters_per_domain = 0;
  AdamConfig adam;
  BatchSpec batch;
  // One entry shared by all domains, or one per domain.
  std::vector<ClusterSettings> clustering{ClusterSettings{}};
  TripletConfig triplet;
  RunMode mode = RunMode::unDG;
  bool flip = true;
  bool crop = true;
  // Unset: on exactly in UDAwoSL mode.
  std::optional<bool> random_erasing;
  std::size_t eval_batch = 64;
  // Evaluate targets every this many epochs (0: only after the last epoch).
  std::size_t eval_every = 0;
  bool keep_epoch_checkpoints = false;
  std::uint64_t seed = 0;
  ModelConfig model = ModelConfig::standard();

  void validate() const;
  const ClusterSettings& clustering_for(std::size_t domain) const;
  AugmentConfig augment_config() const;
  // Fills input size and domain count from the data.
  void resolve_model(const std::vector<DomainData>& sources);
};

// Everything that changes during training.
struct TrainingState {
  Backbone<float> model;
  ClassifierBank<float> heads;
  Adam optimizer;
  std::size_t epoch = 0;  // completed epochs

  explicit TrainingState(const TrainConfig& cfg);
};

struct DomainEpochStats {
  std::size_t num_samples = 0;
  std::size_t num_clusters = 0;
  std::size_t num_noise = 0;
  double epsilon = 0.0;
  std::optional<double> ami;
  std::optional<double> fmi;
  std::size_t iterations = 0;
  bool skipped = false;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::vector<DomainEpochStats> domains;
  double cls_loss = 0.0;  // mean over steps
  double tri_loss = 0.0;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
  std::vector<EvalReport> evaluations;
};

std::string epoch_log_to_json(const EpochLog& log);  // one line, no trailing newline
EpochLog epoch_log_from_json(const std::string& line);

// Eval-mode, L2-normalized embeddings of the domain's train split through its
// own path.
Tensor<float> extract_features(Backbone<float>& model, const DomainData& data, std::size_t domain,
                               std::size_t batch_size = 64);

// Labels per train sample for one domain: cluster ids (or identities mapped to
// 0..k-1) and kNoise for excluded samples.
struct DomainLabels {
  std::vector<std::int64_t> labels;
  std::size_t num_classes = 0;
};

// DBSCAN on each domain's features independently.
std::vector<ClusterAssignment> relabel(const std::vector<Tensor<float>>& features, const TrainConfig& cfg,
                                       std::vector<double>* epsilons = nullptr);
DomainLabels labels_from_assignment(const ClusterAssignment& a);
// Ground-truth identities renumbered in ascending order; throws DataError when
// any train record lacks an identity.
DomainLabels labels_from_identities(const DomainData& data);
// Fresh heads sized to the class counts; old head moments are dropped.
void rebuild_heads(TrainingState& state, const std::vector<DomainLabels>& labels, std::uint64_t seed);

// Observer of every training batch: domain, train-split positions, labels.
using BatchObserver =
    std::function<void(std::size_t, const std::vector<std::size_t>&, const std::vector<std::int64_t>&)>;

// One epoch of round-robin training over domains 0..D-1. Domains with fewer
// than two usable labels or without a head are skipped. Fills the loss and
// per-domain iteration fields of `log`.
void train_epoch(TrainingState& state, const std::vector<DomainData>& sources,
                 const std::vector<DomainLabels>& labels, const TrainConfig& cfg, std::uint64_t epoch_seed,
                 EpochLog& log, const BatchObserver& observer = {});

CheckpointData make_checkpoint(TrainingState& state, const TrainConfig& cfg);
void save_checkpoint(const std::filesystem::path& path, TrainingState& state, const TrainConfig& cfg);

struct LoadedCheckpoint {
  TrainConfig config;
  TrainingState state;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

struct RunOptions {
  // Held-out domains evaluated with every path (unDG and supervisedDG).
  std::vector<DomainData> targets;
  // Continue from <out_dir>/checkpoint.bin when it exists.
  bool resume = false;
  // Stop after this many total epochs (for tests of interrupted runs).
  std::optional<std::size_t> stop_after;
  std::function<void(const EpochLog&)> on_epoch;
  BatchObserver observer;
};

struct RunSummary {
  std::size_t epochs_completed = 0;
  std::vector<EpochLog> logs;
  std::vector<EvalReport> final_evaluations;
};

// The alternating cluster/train loop. Writes <out_dir>/checkpoint.bin every
// epoch, run_log.jsonl (one line per epoch), eval_<domain>.json and
// summary.json after the last epoch.
RunSummary run(TrainConfig cfg, const std::vector<DomainData>& sources, const std::filesystem::path& out_dir,
               RunOptions options = {});

// Order-sensitive hash over parameters and running statistics.
std::uint64_t state_hash(Backbone<float>& model);

}  // namespace dsaf

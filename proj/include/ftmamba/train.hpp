#pragma once

#include <string>
#include <vector>

#include "ftmamba/envs.hpp"
#include "ftmamba/metrics.hpp"
#include "ftmamba/two_tower.hpp"

namespace ftmamba {

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  ModelConfig model;
  int steps = 5000;
  int batch_size = 32;
  double lr = 1e-4;
  int eval_cadence = 250;
  unsigned seed = 0;
  std::vector<int> eval_ks = {1, 5, 10};
  bool verbose = false;
};

struct TrajectoryPoint {
  int step = 0;               // 0 = before any update
  double loss = 0.0;          // mean batch loss since the previous point
  std::vector<double> hr;     // HR@k for each eval_ks entry
};

struct TrainResult {
  TwoTowerModel<double> model;
  std::vector<TrajectoryPoint> trajectory;
  double initial_loss = 0.0;  // untrained loss over the first logging window
  double final_loss = 0.0;    // mean over the last logged window
};

// Minimizes 0.5 * mean((score - target)^2) per batch with Adam.  Evaluates
// HR@k on the eval block every eval_cadence steps.  Throws on non-finite loss
// with step/lr/gradient-norm diagnostics.
TrainResult train(const TrainConfig& cfg, const InteractionSet& data);

// Forward-only 0.5 * mean((score - target)^2) over train rows
// [begin, begin + count).  Fixed-row probes make before/after-training loss
// comparisons free of batch-sampling noise.
double dataset_loss(const TwoTowerModel<double>& model, const InteractionSet& data,
                    std::size_t begin, std::size_t count);

// CSV with header "step,loss,HR@k..." (one HR column per ks entry), prefixed
// by a "# format_version 1" line.
void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& traj,
                          const std::vector<int>& ks);

// The dataset a named training experiment runs on ("spotify" or
// "messaging-KxM"), deterministic in seed.
InteractionSet experiment_dataset(const std::string& experiment, int n_train, int n_test_users,
                                  unsigned seed);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  AggregateResult metrics;
  std::vector<std::vector<int>> rankings;  // full item ranking per eval user
};

// Ranks every eval item for every eval user (score descending, ties by
// ascending index) and aggregates all five metrics at each k.  The model is
// not modified.  Throws if the model and dataset schemas disagree.
EvalResult evaluate(const TwoTowerModel<double>& model, const InteractionSet& data,
                    const std::vector<int>& ks);

// Same ranking + aggregation from an explicit [user][item] score matrix.
EvalResult evaluate_scores(const std::vector<std::vector<double>>& scores,
                           const InteractionSet& data, const std::vector<int>& ks);

// Per-user recommendation/like lists for the diversity profile; recommended
// lists are truncated to each user's like count.
SeedRecommendations recommendations_from(const EvalResult& eval, const InteractionSet& data);

// ---------------------------------------------------------------------------
// Scaling benchmark

struct BenchmarkPoint {
  int length = 0;
  double seconds = 0.0;  // median single-forward wall time
};

struct BenchmarkReport {
  std::string kind;
  int d = 0;
  std::vector<BenchmarkPoint> points;
  double slope = 0.0;  // least-squares slope of log(time) vs log(length)
};

// kind: "mamba" | "transformer" (one embedder layer), "attention-core"
// (projection-free softmax(x x^T) x, the quadratic kernel alone), or "copy"
// (memcpy calibration baseline, slope ~ 1).  Repetition counts grow
// automatically until each sample is comfortably above timer resolution.
BenchmarkReport benchmark_scaling(const std::string& kind, int d, const std::vector<int>& lengths,
                                  int trials, unsigned seed = 0);

// ---------------------------------------------------------------------------
// Experiment presets and the reproduce driver

// "desk": d=64, 2 Mamba layers / 1 Transformer layer, 2,000 steps.
// "full": d=192, 4 Mamba layers / 2 Transformer layers, 5,000 steps.
TrainConfig desk_config(EmbedderKind kind, const std::string& family);
TrainConfig full_config(EmbedderKind kind, const std::string& family);

struct ReproduceOptions {
  std::string experiment;  // spotify | messaging-KxM | scaling
  std::vector<unsigned> seeds = {0, 1, 2, 3, 4};
  std::string out_dir = "out";
  std::string preset = "desk";  // desk | full
  int benchmark_trials = 3;
  bool verbose = false;
};

extern const std::vector<std::string> kExperimentNames;

// Generates data, trains both embedder kinds per seed, evaluates, and writes
// config.json, metrics.csv, summary.json, table.csv, per-run trajectories,
// diff profiles, and checkpoints (or benchmark.csv/slopes.json for scaling).
void reproduce(const ReproduceOptions& opts);

}  // namespace ftmamba

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fairbase/data.hpp"
#include "fairbase/metrics.hpp"
#include "fairbase/model.hpp"
#include "fairbase/objective.hpp"

namespace fairbase::trainer {

enum class LrSchedule { kCosine, kConstant };
enum class LrGranularity { kPerEpoch, kPerStep };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 512;  // auto-shrunk to the dataset size
  double base_lr = 1e-4;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  LrGranularity lr_granularity = LrGranularity::kPerEpoch;
  objective::ObjectiveConfig objective;
  bool balance_training_set = false;
  // Unset = stratify exactly when the fairness term is active (gamma > 0).
  std::optional<bool> stratified_batches;
  double weight_decay = 0.02;
  std::uint64_t seed = 0;
  int eval_every = 0;  // epochs between test evaluations; 0 = final only
  metrics::MissingCellPolicy eval_missing_cells = metrics::MissingCellPolicy::kError;

  bool stratify() const { return stratified_batches.value_or(objective.gamma > 0.0); }
  void validate() const;  // throws ConfigError
};

struct EpochRecord {
  double total = 0.0;
  double ce = 0.0;
  double sigma_soft = 0.0;
  double train_accuracy = 0.0;
  double lr = 0.0;
};

struct EvalRecord {
  int epoch = 0;  // record written after this epoch finished
  metrics::MetricsReport report;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<EvalRecord> evaluations;
  std::int64_t skipped_batches = 0;  // batches dropped for lacking a demographic
};

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)); no warmup, no restarts.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

// One epoch of index batches where every (demographic, target) pair
// contributes at least floor(batch_size / num_pairs) samples per batch,
// filled by per-pair shuffled round-robin. Every sample appears at least
// once. Requires batch_size >= number of pairs.
std::vector<std::vector<std::size_t>> stratified_batches(const data::Dataset& dataset,
                                                         int batch_size,
                                                         std::uint64_t seed);

// Plain shuffled consecutive batches (last one may be short).
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t num_samples,
                                                       int batch_size,
                                                       std::uint64_t seed);

struct TrainResult {
  model::ModelParams params;
  model::OptimizerState optimizer;
  TrainHistory history;
};

// Full mini-batch training loop: optional oversample balancing, stratified or
// shuffled batching, forward / total_loss / backward / adamw_step with the
// configured learning-rate schedule. Deterministic in (dataset, spec, config).
// When test_set is given, compute_report on it is recorded per eval_every.
TrainResult train(const data::Dataset& train_set, const model::ModelSpec& spec,
                  const TrainConfig& config, const data::Dataset* test_set = nullptr);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over splits
};

struct ExperimentResult {
  std::vector<metrics::MetricsReport> split_reports;
  std::vector<std::string> split_errors;  // empty string = split succeeded
  std::vector<TrainHistory> split_histories;
  // Keys: acc, sigma_acc, deo_max, deo_avg.
  std::map<std::string, Aggregate> aggregates;
  bool partial = false;  // true when at least one split failed
};

struct SingleRun {
  model::ModelSpec spec;  // with the derived per-split init seed
  TrainConfig config;     // with the derived per-split train seed
  data::Split split;
  TrainResult result;
  metrics::MetricsReport report;  // on the balanced test half
};

// Deterministic per-split seed lineage shared by run_single_split and the
// CLI train command (which is exactly split 0 of an experiment).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                          std::uint64_t index = 0);

SingleRun run_single_split(const data::Dataset& dataset, const model::ModelSpec& spec,
                           const TrainConfig& config, double test_fraction,
                           int split_index);

// Trains one model per balanced split and aggregates the test reports as
// mean and sample standard deviation per metric.
ExperimentResult run_experiment(const data::Dataset& dataset,
                                const model::ModelSpec& spec,
                                const TrainConfig& config, double test_fraction,
                                int splits = 3);

}  // namespace fairbase::trainer

#include "fairbase/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <utility>

#include "fairbase/errors.hpp"
#include "rng_util.hpp"

namespace fairbase::trainer {

void TrainConfig::validate() const {
  if (epochs <= 0) {
    throw ConfigError("epochs must be positive, got " + std::to_string(epochs));
  }
  if (batch_size <= 0) {
    throw ConfigError("batch_size must be positive, got " + std::to_string(batch_size));
  }
  if (!(base_lr > 0.0)) {
    throw ConfigError("base_lr must be positive");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("weight_decay must be non-negative");
  }
  if (eval_every < 0) {
    throw ConfigError("eval_every must be non-negative, got " +
                      std::to_string(eval_every));
  }
  objective.validate();
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps <= 0) {
    throw ArgumentError("total_steps must be positive");
  }
  if (step < 0 || step >= total_steps) {
    throw ArgumentError("step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + ")");
  }
  const double phase =
      std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(phase));
}

std::vector<std::vector<std::size_t>> stratified_batches(const data::Dataset& dataset,
                                                         int batch_size,
                                                         std::uint64_t seed) {
  if (dataset.samples.empty()) {
    throw EmptyInputError("cannot batch an empty dataset");
  }
  std::map<metrics::GroupKey, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    members[{dataset.samples[i].demographic, dataset.samples[i].target}].push_back(i);
  }
  const auto num_pairs = static_cast<int>(members.size());
  if (batch_size < num_pairs) {
    throw ConfigError("stratified batches need batch_size >= " +
                      std::to_string(num_pairs) + " (one slot per pair), got " +
                      std::to_string(batch_size));
  }
  const int quota = batch_size / num_pairs;
  std::size_t max_count = 0;
  for (const auto& [key, indices] : members) {
    max_count = std::max(max_count, indices.size());
  }
  const auto num_batches = static_cast<std::size_t>(
      (max_count + static_cast<std::size_t>(quota) - 1) / static_cast<std::size_t>(quota));

  // Per-pair shuffled cyclic queues; reading quota slots per batch for
  // ceil(max_count / quota) batches presents every sample at least once.
  struct Queue {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    std::size_t next() {
      const std::size_t value = order[cursor];
      cursor = (cursor + 1) % order.size();
      return value;
    }
  };
  std::mt19937_64 engine(seed);
  std::vector<Queue> queues;
  queues.reserve(members.size());
  for (auto& [key, indices] : members) {
    Queue queue;
    queue.order = std::move(indices);
    rng::shuffle(queue.order, engine);
    queues.push_back(std::move(queue));
  }

  const int remainder = batch_size - quota * num_pairs;
  std::size_t extra_cursor = 0;  // rotates so leftover slots spread over pairs
  std::vector<std::vector<std::size_t>> batches(num_batches);
  for (std::vector<std::size_t>& batch : batches) {
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (Queue& queue : queues) {
      for (int s = 0; s < quota; ++s) batch.push_back(queue.next());
    }
    for (int s = 0; s < remainder; ++s) {
      batch.push_back(queues[extra_cursor].next());
      extra_cursor = (extra_cursor + 1) % queues.size();
    }
  }
  return batches;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t num_samples,
                                                       int batch_size,
                                                       std::uint64_t seed) {
  if (num_samples == 0) {
    throw EmptyInputError("cannot batch zero samples");
  }
  std::vector<std::size_t> order(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) order[i] = i;
  std::mt19937_64 engine(seed);
  rng::shuffle(order, engine);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < num_samples;
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(num_samples, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
  std::uint64_t h = 14695981039346656037ull ^ base;  // FNV-1a offset basis
  auto mix = [&h](std::uint64_t value) {
    h ^= value;
    h *= 1099511628211ull;  // FNV prime
  };
  for (char c : tag) mix(static_cast<unsigned char>(c));
  mix(index);
  // splitmix64 finalizer for avalanche
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

namespace {

metrics::MetricsReport evaluate(const model::ModelSpec& spec,
                                const model::ModelParams& params,
                                const data::Dataset& dataset,
                                metrics::MissingCellPolicy policy) {
  std::vector<std::vector<double>> features;
  features.reserve(dataset.samples.size());
  OutputBatch batch;
  for (const data::LabeledSample& sample : dataset.samples) {
    features.push_back(sample.features);
    batch.targets.push_back(sample.target);
    batch.demographics.push_back(sample.demographic);
  }
  batch.outputs = model::forward(spec, params, features).logits;
  return metrics::compute_report(batch, policy);
}

}  // namespace

TrainResult train(const data::Dataset& train_set, const model::ModelSpec& spec,
                  const TrainConfig& config, const data::Dataset* test_set) {
  config.validate();
  spec.validate();
  train_set.validate();
  if (train_set.samples.empty()) {
    throw EmptyInputError("cannot train on an empty dataset");
  }
  if (train_set.feature_dim() != spec.input_dim) {
    throw ConfigError("dataset feature_dim " + std::to_string(train_set.feature_dim()) +
                      " does not match model input_dim " + std::to_string(spec.input_dim));
  }
  if (train_set.num_classes > spec.num_classes) {
    throw ConfigError("dataset declares " + std::to_string(train_set.num_classes) +
                      " classes but the model only outputs " +
                      std::to_string(spec.num_classes));
  }
  if (test_set) {
    test_set->validate();
    if (test_set->feature_dim() != spec.input_dim ||
        test_set->num_classes > spec.num_classes) {
      throw ConfigError("test set shape does not match the model");
    }
  }

  data::Dataset working = train_set;
  if (config.balance_training_set) {
    working = data::oversample_balance(train_set, derive_seed(config.seed, "balance"));
  }
  const int batch_size =
      std::min<int>(config.batch_size, static_cast<int>(working.samples.size()));
  const bool stratify = config.stratify();

  std::optional<int> expected_demographics;
  if (config.objective.gamma > 0.0) {
    std::set<int> present;
    for (const data::LabeledSample& sample : working.samples) {
      present.insert(sample.demographic);
    }
    expected_demographics = static_cast<int>(present.size());
  }

  TrainResult result;
  result.params = model::init_params(spec);
  result.optimizer =
      model::init_optimizer(result.params, config.base_lr, config.weight_decay);

  // Both batching modes yield the same batch count every epoch, so the
  // per-step schedule length is known up front.
  const std::size_t batches_per_epoch =
      stratify
          ? stratified_batches(working, batch_size, derive_seed(config.seed, "probe"))
                .size()
          : (working.samples.size() + static_cast<std::size_t>(batch_size) - 1) /
                static_cast<std::size_t>(batch_size);
  const auto total_steps =
      static_cast<std::int64_t>(batches_per_epoch) * config.epochs;

  bool warned_skip = false;
  std::int64_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t batch_seed = derive_seed(config.seed, "batches",
                                                 static_cast<std::uint64_t>(epoch));
    const std::vector<std::vector<std::size_t>> batches =
        stratify ? stratified_batches(working, batch_size, batch_seed)
                 : shuffled_batches(working.samples.size(), batch_size, batch_seed);

    EpochRecord record;
    record.lr = config.lr_granularity == LrGranularity::kPerEpoch
                    ? (config.lr_schedule == LrSchedule::kCosine
                           ? cosine_lr(epoch, config.epochs, config.base_lr)
                           : config.base_lr)
                    : config.base_lr;
    std::size_t processed_batches = 0;
    std::int64_t correct = 0;
    std::int64_t seen = 0;
    for (const std::vector<std::size_t>& batch_indices : batches) {
      double lr = record.lr;
      if (config.lr_granularity == LrGranularity::kPerStep) {
        lr = config.lr_schedule == LrSchedule::kCosine
                 ? cosine_lr(global_step, total_steps, config.base_lr)
                 : config.base_lr;
        record.lr = lr;
      }
      ++global_step;

      std::vector<std::vector<double>> features;
      features.reserve(batch_indices.size());
      OutputBatch batch;
      for (std::size_t index : batch_indices) {
        const data::LabeledSample& sample = working.samples[index];
        features.push_back(sample.features);
        batch.targets.push_back(sample.target);
        batch.demographics.push_back(sample.demographic);
      }
      model::Forward activations = model::forward(spec, result.params, features);
      batch.outputs = std::move(activations.logits);

      objective::LossValue loss;
      try {
        loss = objective::total_loss(batch, config.objective, expected_demographics);
      } catch (const DegenerateGroupError& error) {
        ++result.history.skipped_batches;
        if (!warned_skip) {
          std::fprintf(stderr, "warning: skipping batch without every demographic (%s)\n",
                       error.what());
          warned_skip = true;
        }
        continue;
      }

      for (std::size_t i = 0; i < batch.size(); ++i) {
        correct += metrics::accuracy_indicator(batch.outputs[i], batch.targets[i]);
      }
      seen += static_cast<std::int64_t>(batch.size());

      model::ParamGrads grads =
          model::backward(spec, result.params, activations.cache, loss.grad_outputs);
      result.optimizer.lr = lr;
      try {
        model::adamw_step(result.params, grads, result.optimizer);
      } catch (const NumericError& error) {
        throw NumericError(std::string(error.what()) + " (epoch " +
                           std::to_string(epoch + 1) + ", update " +
                           std::to_string(result.optimizer.step_count + 1) +
                           "; parameters from update " +
                           std::to_string(result.optimizer.step_count) +
                           " are the last finite state)");
      }

      record.total += loss.total;
      record.ce += loss.ce_component;
      record.sigma_soft += loss.sigma_soft_component;
      ++processed_batches;
    }
    if (processed_batches > 0) {
      record.total /= static_cast<double>(processed_batches);
      record.ce /= static_cast<double>(processed_batches);
      record.sigma_soft /= static_cast<double>(processed_batches);
    }
    record.train_accuracy =
        seen > 0 ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    result.history.epochs.push_back(record);

    const int completed = epoch + 1;
    if (test_set && config.eval_every > 0 && completed % config.eval_every == 0) {
      result.history.evaluations.push_back(
          {completed,
           evaluate(spec, result.params, *test_set, config.eval_missing_cells)});
    }
  }
  if (test_set && (result.history.evaluations.empty() ||
                   result.history.evaluations.back().epoch != config.epochs)) {
    result.history.evaluations.push_back(
        {config.epochs,
         evaluate(spec, result.params, *test_set, config.eval_missing_cells)});
  }
  return result;
}

SingleRun run_single_split(const data::Dataset& dataset, const model::ModelSpec& spec,
                           const TrainConfig& config, double test_fraction,
                           int split_index) {
  if (split_index < 0) {
    throw ArgumentError("split_index must be non-negative");
  }
  const auto index = static_cast<std::uint64_t>(split_index);
  SingleRun run;
  run.split = data::balanced_test_split(dataset, test_fraction,
                                        derive_seed(config.seed, "split", index));
  run.spec = spec;
  run.spec.init_seed = derive_seed(config.seed, "model", index);
  run.config = config;
  run.config.seed = derive_seed(config.seed, "train", index);
  run.result = train(run.split.train, run.spec, run.config, &run.split.test);
  run.report = evaluate(run.spec, run.result.params, run.split.test,
                        run.config.eval_missing_cells);
  return run;
}

ExperimentResult run_experiment(const data::Dataset& dataset,
                                const model::ModelSpec& spec, const TrainConfig& config,
                                double test_fraction, int splits) {
  if (splits < 1) {
    throw ArgumentError("splits must be at least 1");
  }
  ExperimentResult experiment;
  experiment.split_reports.resize(static_cast<std::size_t>(splits));
  experiment.split_errors.resize(static_cast<std::size_t>(splits));
  experiment.split_histories.resize(static_cast<std::size_t>(splits));

  std::vector<std::size_t> succeeded;
  for (int i = 0; i < splits; ++i) {
    const auto slot = static_cast<std::size_t>(i);
    try {
      SingleRun run = run_single_split(dataset, spec, config, test_fraction, i);
      experiment.split_reports[slot] = run.report;
      experiment.split_histories[slot] = std::move(run.result.history);
      succeeded.push_back(slot);
    } catch (const Error& error) {
      experiment.split_errors[slot] = error.what();
      experiment.partial = true;
    }
  }

  if (!succeeded.empty()) {
    auto aggregate = [&](auto accessor) {
      double mean = 0.0;
      for (std::size_t slot : succeeded) {
        mean += accessor(experiment.split_reports[slot]);
      }
      mean /= static_cast<double>(succeeded.size());
      double variance = 0.0;
      for (std::size_t slot : succeeded) {
        const double d = accessor(experiment.split_reports[slot]) - mean;
        variance += d * d;
      }
      const double stddev =
          succeeded.size() > 1
              ? std::sqrt(variance / static_cast<double>(succeeded.size() - 1))
              : 0.0;
      return Aggregate{mean, stddev};
    };
    experiment.aggregates["acc"] =
        aggregate([](const metrics::MetricsReport& r) { return r.overall_accuracy; });
    experiment.aggregates["sigma_acc"] =
        aggregate([](const metrics::MetricsReport& r) { return r.sigma_acc; });
    experiment.aggregates["deo_max"] =
        aggregate([](const metrics::MetricsReport& r) { return r.deo_max; });
    experiment.aggregates["deo_avg"] =
        aggregate([](const metrics::MetricsReport& r) { return r.deo_avg; });
  }
  return experiment;
}

}  // namespace fairbase::trainer

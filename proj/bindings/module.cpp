#include <optional>
#include <utility>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fairbase/data.hpp"
#include "fairbase/errors.hpp"
#include "fairbase/metrics.hpp"
#include "fairbase/model.hpp"
#include "fairbase/objective.hpp"
#include "fairbase/trainer.hpp"
#include "fairbase/version.hpp"

namespace py = pybind11;
using namespace fairbase;

namespace {

OutputBatch make_batch(std::vector<std::vector<double>> outputs,
                       std::vector<int> targets, std::vector<int> demographics) {
  OutputBatch batch;
  batch.outputs = std::move(outputs);
  batch.targets = std::move(targets);
  batch.demographics = std::move(demographics);
  return batch;
}

metrics::MissingCellPolicy policy_from(const std::string& text) {
  if (text == "error") return metrics::MissingCellPolicy::kError;
  if (text == "skip") return metrics::MissingCellPolicy::kSkip;
  throw ArgumentError("missing_cells must be 'error' or 'skip'");
}

objective::SurrogateInput surrogate_from(const std::string& text) {
  if (text == "softmax") return objective::SurrogateInput::kSoftmaxProbabilities;
  if (text == "logits") return objective::SurrogateInput::kRawLogits;
  throw ArgumentError("surrogate must be 'softmax' or 'logits'");
}

model::Activation activation_from(const std::string& text) {
  if (text == "relu") return model::Activation::kRelu;
  if (text == "tanh") return model::Activation::kTanh;
  throw ArgumentError("activation must be 'relu' or 'tanh'");
}

py::dict report_to_dict(const metrics::MetricsReport& report) {
  py::dict per_group;
  for (const auto& [demographic, rate] : report.per_demographic_accuracy) {
    per_group[py::int_(demographic)] = rate;
  }
  py::dict counts;
  for (const auto& [key, count] : report.sample_counts) {
    counts[py::make_tuple(key.demographic, key.target)] = count;
  }
  using namespace py::literals;
  return py::dict("acc"_a = report.overall_accuracy, "sigma_acc"_a = report.sigma_acc,
                  "deo_max"_a = report.deo_max, "deo_avg"_a = report.deo_avg,
                  "per_group"_a = per_group, "sample_counts"_a = counts);
}

py::dict history_to_dict(const trainer::TrainHistory& history) {
  py::list epochs;
  for (const trainer::EpochRecord& record : history.epochs) {
    using namespace py::literals;
    epochs.append(py::dict("total"_a = record.total, "ce"_a = record.ce,
                           "sigma_soft"_a = record.sigma_soft,
                           "train_accuracy"_a = record.train_accuracy,
                           "lr"_a = record.lr));
  }
  py::list evaluations;
  for (const trainer::EvalRecord& record : history.evaluations) {
    using namespace py::literals;
    evaluations.append(
        py::dict("epoch"_a = record.epoch, "metrics"_a = report_to_dict(record.report)));
  }
  using namespace py::literals;
  return py::dict("epochs"_a = epochs, "evaluations"_a = evaluations,
                  "skipped_batches"_a = history.skipped_batches);
}

trainer::TrainConfig config_from_kwargs(double gamma, double kappa,
                                        const std::string& surrogate, int epochs,
                                        int batch_size, double lr, bool balance,
                                        std::optional<bool> stratified,
                                        double weight_decay, std::uint64_t seed,
                                        int eval_every) {
  trainer::TrainConfig config;
  config.epochs = epochs;
  config.batch_size = batch_size;
  config.base_lr = lr;
  config.objective.gamma = gamma;
  config.objective.kappa = kappa;
  config.objective.surrogate_input = surrogate_from(surrogate);
  config.balance_training_set = balance;
  config.stratified_batches = stratified;
  config.weight_decay = weight_decay;
  config.seed = seed;
  config.eval_every = eval_every;
  return config;
}

}  // namespace

PYBIND11_MODULE(_fairbase, m) {
  m.doc() = "core operations for fairness-aware training experiments";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "FairbaseError", PyExc_RuntimeError);

  py::class_<data::LabeledSample>(m, "LabeledSample")
      .def(py::init<>())
      .def_readwrite("features", &data::LabeledSample::features)
      .def_readwrite("target", &data::LabeledSample::target)
      .def_readwrite("demographic", &data::LabeledSample::demographic);

  py::class_<data::Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("samples", &data::Dataset::samples)
      .def_readwrite("num_classes", &data::Dataset::num_classes)
      .def_readwrite("num_demographics", &data::Dataset::num_demographics)
      .def_readwrite("provenance", &data::Dataset::provenance)
      .def("__len__", &data::Dataset::size)
      .def("feature_dim", &data::Dataset::feature_dim)
      .def("pair_counts", [](const data::Dataset& dataset) {
        py::dict counts;
        for (const auto& [key, count] : dataset.pair_counts()) {
          counts[py::make_tuple(key.demographic, key.target)] = count;
        }
        return counts;
      });

  m.def(
      "generate",
      [](int samples, int classes, int demographics, int features, double separation,
         std::vector<double> noise, std::vector<double> shift, std::uint64_t seed,
         std::optional<double> pair_skew) {
        data::SyntheticSpec spec;
        spec.num_samples = samples;
        spec.num_classes = classes;
        spec.num_demographics = demographics;
        spec.feature_dim = features;
        spec.group_separation = separation;
        spec.demographic_noise = std::move(noise);
        spec.demographic_shift = std::move(shift);
        spec.seed = seed;
        std::optional<data::Matrix> distribution;
        if (pair_skew) {
          data::SkewSpec skew;
          skew.skew = *pair_skew;
          skew.num_targets = classes;
          skew.num_demographics = demographics;
          distribution = data::skew_matrix(skew);
        }
        return data::generate_synthetic(spec, distribution);
      },
      py::arg("samples") = 1000, py::arg("classes") = 2, py::arg("demographics") = 2,
      py::arg("features") = 2, py::arg("separation") = 1.0,
      py::arg("noise") = std::vector<double>{}, py::arg("shift") = std::vector<double>{},
      py::arg("seed") = 0, py::arg("pair_skew") = std::nullopt,
      "synthetic Gaussian-cluster dataset, deterministic in the seed");

  m.def("load_csv", &data::load_csv, py::arg("path"),
        py::arg("num_classes") = std::nullopt,
        py::arg("num_demographics") = std::nullopt);
  m.def("save_csv", &data::save_csv, py::arg("dataset"), py::arg("path"));
  m.def("oversample_balance", &data::oversample_balance, py::arg("dataset"),
        py::arg("seed"));
  m.def(
      "skew_matrix",
      [](double s, int targets, int demographics) {
        data::SkewSpec spec;
        spec.skew = s;
        spec.num_targets = targets;
        spec.num_demographics = demographics;
        return data::skew_matrix(spec);
      },
      py::arg("s"), py::arg("targets") = 2, py::arg("demographics") = 2);
  m.def("apply_skew", &data::apply_skew, py::arg("dataset"), py::arg("matrix"),
        py::arg("seed"));
  m.def(
      "balanced_test_split",
      [](const data::Dataset& dataset, double test_fraction, std::uint64_t seed) {
        data::Split split = data::balanced_test_split(dataset, test_fraction, seed);
        return py::make_tuple(std::move(split.train), std::move(split.test));
      },
      py::arg("dataset"), py::arg("test_fraction"), py::arg("seed"));

  m.def(
      "metrics_report",
      [](std::vector<std::vector<double>> outputs, std::vector<int> targets,
         std::vector<int> demographics, const std::string& missing_cells) {
        return report_to_dict(metrics::compute_report(
            make_batch(std::move(outputs), std::move(targets), std::move(demographics)),
            policy_from(missing_cells)));
      },
      py::arg("outputs"), py::arg("targets"), py::arg("demographics"),
      py::arg("missing_cells") = "error");
  m.def(
      "sigma_acc",
      [](std::vector<double> rates) { return metrics::sigma_acc(rates); },
      py::arg("per_demographic_rates"));
  m.def("soft_accuracy", &objective::soft_accuracy, py::arg("y_t"), py::arg("y_m"),
        py::arg("kappa"));
  m.def(
      "sigma_acc_soft",
      [](std::vector<std::vector<double>> outputs, std::vector<int> targets,
         std::vector<int> demographics, double kappa, const std::string& surrogate,
         double sigma_epsilon) {
        objective::ObjectiveConfig config;
        config.kappa = kappa;
        config.surrogate_input = surrogate_from(surrogate);
        config.sigma_epsilon = sigma_epsilon;
        objective::SigmaSoft result = objective::sigma_acc_soft(
            make_batch(std::move(outputs), std::move(targets), std::move(demographics)),
            config);
        return py::make_tuple(result.value, std::move(result.grad_outputs));
      },
      py::arg("outputs"), py::arg("targets"), py::arg("demographics"),
      py::arg("kappa") = 10.0, py::arg("surrogate") = "softmax",
      py::arg("sigma_epsilon") = 1e-12);
  m.def(
      "cross_entropy",
      [](std::vector<std::vector<double>> outputs, std::vector<int> targets) {
        std::vector<int> demographics(targets.size(), 0);
        objective::CrossEntropy result = objective::cross_entropy(make_batch(
            std::move(outputs), std::move(targets), std::move(demographics)));
        return py::make_tuple(result.value, std::move(result.grad_logits));
      },
      py::arg("outputs"), py::arg("targets"));

  m.def(
      "train",
      [](const data::Dataset& dataset, double test_fraction, std::vector<int> hidden,
         const std::string& activation, double gamma, double kappa,
         const std::string& surrogate, int epochs, int batch_size, double lr,
         bool balance, std::optional<bool> stratified, double weight_decay,
         std::uint64_t seed, int eval_every) {
        model::ModelSpec spec;
        spec.input_dim = dataset.feature_dim();
        spec.num_classes = dataset.num_classes;
        spec.hidden_dims = std::move(hidden);
        spec.activation = activation_from(activation);
        const trainer::TrainConfig config = config_from_kwargs(
            gamma, kappa, surrogate, epochs, batch_size, lr, balance, stratified,
            weight_decay, seed, eval_every);
        const trainer::SingleRun run =
            trainer::run_single_split(dataset, spec, config, test_fraction, 0);
        using namespace py::literals;
        return py::dict("metrics"_a = report_to_dict(run.report),
                        "history"_a = history_to_dict(run.result.history));
      },
      py::arg("dataset"), py::arg("test_fraction") = 0.2,
      py::arg("hidden") = std::vector<int>{16}, py::arg("activation") = "relu",
      py::arg("gamma") = 0.0, py::arg("kappa") = 10.0, py::arg("surrogate") = "softmax",
      py::arg("epochs") = 50, py::arg("batch_size") = 512, py::arg("lr") = 1e-4,
      py::arg("balance") = false, py::arg("stratified") = std::nullopt,
      py::arg("weight_decay") = 0.02, py::arg("seed") = 0, py::arg("eval_every") = 0,
      "train one model on a balanced split; returns test metrics and history");

  m.def(
      "run_experiment",
      [](const data::Dataset& dataset, double test_fraction, std::vector<int> hidden,
         const std::string& activation, double gamma, double kappa,
         const std::string& surrogate, int epochs, int batch_size, double lr,
         bool balance, std::optional<bool> stratified, double weight_decay,
         std::uint64_t seed, int splits) {
        model::ModelSpec spec;
        spec.input_dim = dataset.feature_dim();
        spec.num_classes = dataset.num_classes;
        spec.hidden_dims = std::move(hidden);
        spec.activation = activation_from(activation);
        const trainer::TrainConfig config =
            config_from_kwargs(gamma, kappa, surrogate, epochs, batch_size, lr,
                               balance, stratified, weight_decay, seed, 0);
        const trainer::ExperimentResult result =
            trainer::run_experiment(dataset, spec, config, test_fraction, splits);
        py::list reports;
        for (std::size_t i = 0; i < result.split_reports.size(); ++i) {
          if (result.split_errors[i].empty()) {
            reports.append(report_to_dict(result.split_reports[i]));
          } else {
            reports.append(py::none());
          }
        }
        py::dict aggregates;
        for (const auto& [key, aggregate] : result.aggregates) {
          using namespace py::literals;
          aggregates[py::str(key)] =
              py::dict("mean"_a = aggregate.mean, "std"_a = aggregate.stddev);
        }
        using namespace py::literals;
        return py::dict("splits"_a = reports, "split_errors"_a = result.split_errors,
                        "aggregates"_a = aggregates, "partial"_a = result.partial);
      },
      py::arg("dataset"), py::arg("test_fraction") = 0.2,
      py::arg("hidden") = std::vector<int>{16}, py::arg("activation") = "relu",
      py::arg("gamma") = 0.0, py::arg("kappa") = 10.0, py::arg("surrogate") = "softmax",
      py::arg("epochs") = 50, py::arg("batch_size") = 512, py::arg("lr") = 1e-4,
      py::arg("balance") = false, py::arg("stratified") = std::nullopt,
      py::arg("weight_decay") = 0.02, py::arg("seed") = 0, py::arg("splits") = 3,
      "mean and standard deviation of the test metrics over balanced splits");

  m.def("derive_seed", &trainer::derive_seed, py::arg("base"), py::arg("tag"),
        py::arg("index") = 0);
  m.def("cosine_lr", &trainer::cosine_lr, py::arg("step"), py::arg("total_steps"),
        py::arg("base_lr"));
}

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "fairbase/checkpoint.hpp"
#include "fairbase/data.hpp"
#include "fairbase/errors.hpp"
#include "fairbase/io_util.hpp"
#include "fairbase/metrics.hpp"
#include "fairbase/model.hpp"
#include "fairbase/objective.hpp"
#include "fairbase/trainer.hpp"
#include "fairbase/version.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fairbase;

constexpr int kSchemaVersion = 1;

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) !=
      1) {
    throw Error("sha256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(static_cast<std::size_t>(length) * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string now_utc_iso() {
  const std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm parts{};
  gmtime_r(&now, &parts);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &parts);
  return buffer;
}

struct NamedInput {
  std::string path;    // as given on the command line / in the manifest
  std::string digest;  // sha256 of the file content
};

NamedInput digest_input(const std::string& path) {
  return {path, sha256_hex(io::read_file(path))};
}

// Everything a command needs to execute: the fully resolved config (which
// excludes the output directory so a replay can land elsewhere), where to
// write, and the timestamp recorded in the manifest.
struct Ctx {
  std::string command;
  json config;
  fs::path out_dir = ".";
  std::string created_at;
};

json build_manifest(const Ctx& ctx, const std::vector<NamedInput>& inputs,
                    json seed_lineage) {
  json entries = json::array();
  for (const NamedInput& input : inputs) {
    entries.push_back({{"path", input.path}, {"sha256", input.digest}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"tool_version", kVersion},
              {"command", ctx.command},
              {"created_at", ctx.created_at},
              {"config", ctx.config},
              {"seed_lineage", std::move(seed_lineage)},
              {"inputs", std::move(entries)}};
}

void write_json(const fs::path& path, const json& doc) {
  io::atomic_write(path, doc.dump(2) + "\n");
}

json metrics_to_json(const metrics::MetricsReport& report) {
  json per_group = json::object();
  for (const auto& [demographic, rate] : report.per_demographic_accuracy) {
    per_group[std::to_string(demographic)] = rate;
  }
  return json{{"acc", report.overall_accuracy},
              {"sigma_acc", report.sigma_acc},
              {"deo_max", report.deo_max},
              {"deo_avg", report.deo_avg},
              {"per_group", std::move(per_group)}};
}

json history_to_json(const trainer::TrainHistory& history) {
  json epochs = json::array();
  for (const trainer::EpochRecord& record : history.epochs) {
    epochs.push_back({{"total", record.total},
                      {"ce", record.ce},
                      {"sigma_soft", record.sigma_soft},
                      {"train_accuracy", record.train_accuracy},
                      {"lr", record.lr}});
  }
  json evaluations = json::array();
  for (const trainer::EvalRecord& record : history.evaluations) {
    evaluations.push_back(
        {{"epoch", record.epoch}, {"metrics", metrics_to_json(record.report)}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"epochs", std::move(epochs)},
              {"evaluations", std::move(evaluations)},
              {"skipped_batches", history.skipped_batches}};
}

// ---- enum spellings shared by flags and config files ----

objective::SurrogateInput parse_surrogate(const std::string& text) {
  if (text == "softmax") return objective::SurrogateInput::kSoftmaxProbabilities;
  if (text == "logits") return objective::SurrogateInput::kRawLogits;
  throw ConfigError("surrogate must be 'softmax' or 'logits', got '" + text + "'");
}

model::Activation parse_activation(const std::string& text) {
  if (text == "relu") return model::Activation::kRelu;
  if (text == "tanh") return model::Activation::kTanh;
  throw ConfigError("activation must be 'relu' or 'tanh', got '" + text + "'");
}

trainer::LrSchedule parse_schedule(const std::string& text) {
  if (text == "cosine") return trainer::LrSchedule::kCosine;
  if (text == "constant") return trainer::LrSchedule::kConstant;
  throw ConfigError("lr-schedule must be 'cosine' or 'constant', got '" + text + "'");
}

trainer::LrGranularity parse_granularity(const std::string& text) {
  if (text == "epoch") return trainer::LrGranularity::kPerEpoch;
  if (text == "step") return trainer::LrGranularity::kPerStep;
  throw ConfigError("lr-granularity must be 'epoch' or 'step', got '" + text + "'");
}

metrics::MissingCellPolicy parse_missing_cells(const std::string& text) {
  if (text == "error") return metrics::MissingCellPolicy::kError;
  if (text == "skip") return metrics::MissingCellPolicy::kSkip;
  throw ConfigError("missing-cells must be 'error' or 'skip', got '" + text + "'");
}

// ---- config-file support: flags > file > defaults ----

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  const json parsed = json::parse(io::read_file(path), nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw ConfigError("config file " + path + " is not a JSON object");
  }
  return parsed;
}

template <typename T>
void resolve(const CLI::App* cmd, const std::string& flag, const json& file,
             const char* key, T& value) {
  if (cmd->count(flag) == 0 && file.contains(key)) {
    value = file.at(key).get<T>();
  }
}

bool given(const CLI::App* cmd, const std::string& flag, const json& file,
           const char* key) {
  return cmd->count(flag) > 0 || file.contains(key);
}

// Training hyperparameters shared by `train` and `sweep`. gamma / balance /
// stratified stay null until a mode resolves them.
struct TrainOptions {
  double gamma = 1.0;
  double kappa = 10.0;
  std::string surrogate = "softmax";
  double sigma_epsilon = 1e-12;
  int epochs = 50;
  int batch_size = 512;
  double lr = 1e-4;
  std::string lr_schedule = "cosine";
  std::string lr_granularity = "epoch";
  double weight_decay = 0.02;
  int eval_every = 0;
  std::vector<int> hidden{16};
  std::string activation = "relu";
  std::string missing_cells = "error";
  bool balance = false;
  bool stratify = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--gamma", gamma, "fairness weight (base mode default 1.0)");
    cmd->add_option("--kappa", kappa, "soft-accuracy sharpness")
        ->default_val(kappa);
    cmd->add_option("--surrogate", surrogate, "surrogate input: softmax|logits")
        ->default_val(surrogate);
    cmd->add_option("--sigma-epsilon", sigma_epsilon,
                    "smoothing under the fairness sqrt")
        ->default_val(sigma_epsilon);
    cmd->add_option("--epochs", epochs, "training epochs")->default_val(epochs);
    cmd->add_option("--batch-size", batch_size, "mini-batch size")
        ->default_val(batch_size);
    cmd->add_option("--lr", lr, "base learning rate")->default_val(lr);
    cmd->add_option("--lr-schedule", lr_schedule, "cosine|constant")
        ->default_val(lr_schedule);
    cmd->add_option("--lr-granularity", lr_granularity, "epoch|step")
        ->default_val(lr_granularity);
    cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay")
        ->default_val(weight_decay);
    cmd->add_option("--eval-every", eval_every,
                    "epochs between test evaluations (0 = final only)")
        ->default_val(eval_every);
    cmd->add_option("--hidden", hidden, "hidden layer widths")
        ->delimiter(',')
        ->default_str("16");
    cmd->add_option("--activation", activation, "relu|tanh")->default_val(activation);
    cmd->add_option("--missing-cells", missing_cells,
                    "evaluation policy for absent (protected,target) cells: error|skip")
        ->default_val(missing_cells);
    cmd->add_flag("--balance,!--no-balance", balance,
                  "oversample-balance the training set");
    cmd->add_flag("--stratify,!--no-stratify", stratify,
                  "force stratified batching on/off (default: on when gamma > 0)");
  }

  // Raw resolved values; gamma/balance/stratified are null when neither a
  // flag nor the config file set them.
  json resolve_raw(const CLI::App* cmd, const json& file) {
    resolve(cmd, "--gamma", file, "gamma", gamma);
    resolve(cmd, "--kappa", file, "kappa", kappa);
    resolve(cmd, "--surrogate", file, "surrogate", surrogate);
    resolve(cmd, "--sigma-epsilon", file, "sigma_epsilon", sigma_epsilon);
    resolve(cmd, "--epochs", file, "epochs", epochs);
    resolve(cmd, "--batch-size", file, "batch_size", batch_size);
    resolve(cmd, "--lr", file, "lr", lr);
    resolve(cmd, "--lr-schedule", file, "lr_schedule", lr_schedule);
    resolve(cmd, "--lr-granularity", file, "lr_granularity", lr_granularity);
    resolve(cmd, "--weight-decay", file, "weight_decay", weight_decay);
    resolve(cmd, "--eval-every", file, "eval_every", eval_every);
    resolve(cmd, "--hidden", file, "hidden", hidden);
    resolve(cmd, "--activation", file, "activation", activation);
    resolve(cmd, "--missing-cells", file, "missing_cells", missing_cells);
    resolve(cmd, "--balance", file, "balance", balance);
    resolve(cmd, "--stratify", file, "stratified", stratify);

    json raw{{"kappa", kappa},
             {"surrogate", surrogate},
             {"sigma_epsilon", sigma_epsilon},
             {"epochs", epochs},
             {"batch_size", batch_size},
             {"lr", lr},
             {"lr_schedule", lr_schedule},
             {"lr_granularity", lr_granularity},
             {"weight_decay", weight_decay},
             {"eval_every", eval_every},
             {"hidden", hidden},
             {"activation", activation},
             {"missing_cells", missing_cells}};
    raw["gamma"] = given(cmd, "--gamma", file, "gamma") ? json(gamma) : json();
    raw["balance"] = given(cmd, "--balance", file, "balance") ? json(balance) : json();
    raw["stratified"] =
        given(cmd, "--stratify", file, "stratified") ? json(stratify) : json();
    return raw;
  }
};

// Maps a run mode onto concrete gamma/balance values, rejecting explicit
// settings that contradict the mode.
std::pair<double, bool> apply_mode(const std::string& mode, const json& gamma_raw,
                                   const json& balance_raw) {
  const bool gamma_set = !gamma_raw.is_null();
  const bool balance_set = !balance_raw.is_null();
  if (mode == "naive" || mode == "naive-balanced") {
    if (gamma_set && gamma_raw.get<double>() != 0.0) {
      throw ConfigError("--mode " + mode + " forces gamma=0; remove --gamma");
    }
    const bool balanced = mode == "naive-balanced";
    if (balance_set && balance_raw.get<bool>() != balanced) {
      throw ConfigError("--mode " + mode + (balanced ? " forces balancing on"
                                                     : " forces balancing off"));
    }
    return {0.0, balanced};
  }
  if (mode == "base") {
    return {gamma_set ? gamma_raw.get<double>() : 1.0,
            balance_set ? balance_raw.get<bool>() : true};
  }
  throw ConfigError("mode must be naive, naive-balanced or base, got '" + mode + "'");
}

trainer::TrainConfig make_train_config(const json& c, std::uint64_t seed) {
  trainer::TrainConfig config;
  config.epochs = c.at("epochs").get<int>();
  config.batch_size = c.at("batch_size").get<int>();
  config.base_lr = c.at("lr").get<double>();
  config.lr_schedule = parse_schedule(c.at("lr_schedule").get<std::string>());
  config.lr_granularity = parse_granularity(c.at("lr_granularity").get<std::string>());
  config.objective.gamma = c.at("gamma").get<double>();
  config.objective.kappa = c.at("kappa").get<double>();
  config.objective.surrogate_input =
      parse_surrogate(c.at("surrogate").get<std::string>());
  config.objective.sigma_epsilon = c.at("sigma_epsilon").get<double>();
  config.balance_training_set = c.at("balance").get<bool>();
  if (!c.at("stratified").is_null()) {
    config.stratified_batches = c.at("stratified").get<bool>();
  }
  config.weight_decay = c.at("weight_decay").get<double>();
  config.seed = seed;
  config.eval_every = c.at("eval_every").get<int>();
  config.eval_missing_cells =
      parse_missing_cells(c.at("missing_cells").get<std::string>());
  return config;
}

model::ModelSpec make_model_spec(const json& c, const data::Dataset& dataset) {
  model::ModelSpec spec;
  spec.input_dim = dataset.feature_dim();
  spec.num_classes = dataset.num_classes;
  spec.hidden_dims = c.at("hidden").get<std::vector<int>>();
  spec.activation = parse_activation(c.at("activation").get<std::string>());
  spec.init_seed = 0;  // derived per split
  return spec;
}

std::optional<int> optional_int(const json& c, const char* key) {
  if (!c.contains(key) || c.at(key).is_null()) return std::nullopt;
  return c.at(key).get<int>();
}

data::Dataset load_dataset(const json& c) {
  return data::load_csv(c.at("input").get<std::string>(), optional_int(c, "classes"),
                        optional_int(c, "demographics"));
}

// ---- commands ----

int run_gen(const Ctx& ctx) {
  const json& c = ctx.config;
  data::SyntheticSpec spec;
  spec.num_samples = c.at("samples").get<int>();
  spec.num_classes = c.at("classes").get<int>();
  spec.num_demographics = c.at("demographics").get<int>();
  spec.feature_dim = c.at("features").get<int>();
  spec.group_separation = c.at("separation").get<double>();
  spec.demographic_noise = c.at("noise").get<std::vector<double>>();
  spec.demographic_shift = c.at("shift").get<std::vector<double>>();
  spec.seed = c.at("seed").get<std::uint64_t>();

  std::optional<data::Matrix> pair_distribution;
  if (!c.at("pair_skew").is_null()) {
    data::SkewSpec skew;
    skew.skew = c.at("pair_skew").get<double>();
    skew.num_targets = spec.num_classes;
    skew.num_demographics = spec.num_demographics;
    pair_distribution = data::skew_matrix(skew);
  }

  const data::Dataset dataset = data::generate_synthetic(spec, pair_distribution);
  const std::string name = c.at("name").get<std::string>();
  data::save_csv(dataset, ctx.out_dir / (name + ".csv"));
  data::save_metadata(dataset, ctx.out_dir / (name + ".meta.json"),
                      {{"seed", spec.seed}});
  write_json(ctx.out_dir / (name + ".manifest.json"),
             build_manifest(ctx, {}, {{"root", spec.seed}}));
  return 0;
}

int run_skew(const Ctx& ctx) {
  const json& c = ctx.config;
  const NamedInput input = digest_input(c.at("input").get<std::string>());
  const data::Dataset dataset = load_dataset(c);

  data::SkewSpec skew;
  skew.skew = c.at("skew").get<double>();
  skew.num_targets = dataset.num_classes;
  skew.num_demographics = dataset.num_demographics;
  const auto seed = c.at("seed").get<std::uint64_t>();
  const data::Dataset skewed =
      data::apply_skew(dataset, data::skew_matrix(skew), seed);

  const std::string name = c.at("name").get<std::string>();
  data::save_csv(skewed, ctx.out_dir / (name + ".csv"));
  data::save_metadata(skewed, ctx.out_dir / (name + ".meta.json"),
                      {{"skew", skew.skew}, {"seed", seed}});
  write_json(ctx.out_dir / (name + ".manifest.json"),
             build_manifest(ctx, {input}, {{"root", seed}}));
  return 0;
}

int run_train(const Ctx& ctx) {
  const json& c = ctx.config;
  const NamedInput input = digest_input(c.at("input").get<std::string>());
  const data::Dataset dataset = load_dataset(c);

  const auto seed = c.at("seed").get<std::uint64_t>();
  const trainer::TrainConfig config = make_train_config(c, seed);
  const model::ModelSpec spec = make_model_spec(c, dataset);
  const double test_fraction = c.at("test_fraction").get<double>();

  const trainer::SingleRun run =
      trainer::run_single_split(dataset, spec, config, test_fraction, 0);

  const std::string name = c.at("name").get<std::string>();
  model::save_checkpoint({run.spec, run.result.params, run.result.optimizer},
                         ctx.out_dir / (name + ".checkpoint.json"));
  write_json(ctx.out_dir / (name + ".history.json"),
             history_to_json(run.result.history));
  data::save_csv(run.split.test, ctx.out_dir / (name + ".testset.csv"));
  data::save_metadata(run.split.test, ctx.out_dir / (name + ".testset.meta.json"),
                      {{"seed", seed}, {"test_fraction", test_fraction}});

  const json lineage{{"root", seed},
                     {"split", trainer::derive_seed(seed, "split", 0)},
                     {"model", trainer::derive_seed(seed, "model", 0)},
                     {"train", trainer::derive_seed(seed, "train", 0)}};
  const json manifest = build_manifest(ctx, {input}, lineage);
  write_json(ctx.out_dir / (name + ".report.json"),
             json{{"schema_version", kSchemaVersion},
                  {"manifest", manifest},
                  {"metrics", metrics_to_json(run.report)}});
  write_json(ctx.out_dir / (name + ".manifest.json"), manifest);
  return 0;
}

int run_eval(const Ctx& ctx) {
  const json& c = ctx.config;
  const NamedInput checkpoint_input = digest_input(c.at("checkpoint").get<std::string>());
  const NamedInput data_input = digest_input(c.at("input").get<std::string>());

  const model::Checkpoint checkpoint =
      model::load_checkpoint(c.at("checkpoint").get<std::string>());
  const data::Dataset dataset = load_dataset(c);
  if (dataset.feature_dim() != checkpoint.spec.input_dim) {
    throw ConfigError("dataset feature_dim " + std::to_string(dataset.feature_dim()) +
                      " does not match checkpoint input_dim " +
                      std::to_string(checkpoint.spec.input_dim));
  }
  if (dataset.num_classes > checkpoint.spec.num_classes) {
    throw ConfigError("dataset declares more classes than the checkpoint outputs");
  }

  OutputBatch batch;
  std::vector<std::vector<double>> features;
  features.reserve(dataset.samples.size());
  for (const data::LabeledSample& sample : dataset.samples) {
    features.push_back(sample.features);
    batch.targets.push_back(sample.target);
    batch.demographics.push_back(sample.demographic);
  }
  batch.outputs =
      model::forward(checkpoint.spec, checkpoint.params, features).logits;
  const metrics::MetricsReport report = metrics::compute_report(
      batch, parse_missing_cells(c.at("missing_cells").get<std::string>()));

  const std::string name = c.at("name").get<std::string>();
  const json manifest =
      build_manifest(ctx, {checkpoint_input, data_input}, json::object());
  write_json(ctx.out_dir / (name + ".report.json"),
             json{{"schema_version", kSchemaVersion},
                  {"manifest", manifest},
                  {"metrics", metrics_to_json(report)}});

  std::string csv = "acc,sigma_acc,deo_max,deo_avg\n";
  csv += io::double_repr(report.overall_accuracy) + "," +
         io::double_repr(report.sigma_acc) + "," + io::double_repr(report.deo_max) +
         "," + io::double_repr(report.deo_avg) + "\n";
  io::atomic_write(ctx.out_dir / (name + ".csv"), csv);
  write_json(ctx.out_dir / (name + ".manifest.json"), manifest);
  return 0;
}

int severity(const std::exception& error) {
  if (dynamic_cast<const NumericError*>(&error)) return 3;
  if (dynamic_cast<const ConfigError*>(&error) ||
      dynamic_cast<const ArgumentError*>(&error)) {
    return 1;
  }
  return 2;
}

int run_sweep(const Ctx& ctx) {
  const json& c = ctx.config;
  const NamedInput input = digest_input(c.at("input").get<std::string>());
  const data::Dataset dataset = load_dataset(c);

  const std::string axis = c.at("axis").get<std::string>();
  const std::vector<double> values = c.at("values").get<std::vector<double>>();
  const std::vector<std::string> modes =
      c.at("modes").get<std::vector<std::string>>();
  const auto seed = c.at("seed").get<std::uint64_t>();
  const double test_fraction = c.at("test_fraction").get<double>();
  const int splits = c.at("splits").get<int>();
  const json& base = c.at("train");

  // One dataset per axis value; skew points share the subsample across modes
  // so the comparison at each value is on identical data.
  std::vector<data::Dataset> value_datasets;
  for (std::size_t v = 0; v < values.size(); ++v) {
    if (axis == "skew") {
      data::SkewSpec skew;
      skew.skew = values[v];
      skew.num_targets = dataset.num_classes;
      skew.num_demographics = dataset.num_demographics;
      value_datasets.push_back(data::apply_skew(dataset, data::skew_matrix(skew),
                                                trainer::derive_seed(seed, "skew", v)));
    } else {
      value_datasets.push_back(dataset);
    }
  }

  struct Point {
    std::size_t value_index = 0;
    std::string mode;
    trainer::ExperimentResult result;
    std::string error;
    int error_code = 0;
  };
  std::vector<Point> points;
  for (std::size_t v = 0; v < values.size(); ++v) {
    for (const std::string& mode : modes) {
      points.push_back({v, mode, {}, {}, 0});
    }
  }

  const std::string name = c.at("name").get<std::string>();
  auto run_point = [&](Point& point) {
    try {
      json point_config = base;
      if (axis == "kappa") point_config["kappa"] = values[point.value_index];
      // Baseline modes pin gamma themselves, so only base follows the axis;
      // naive rows then serve as the reference curve at every value.
      if (axis == "gamma" && point.mode == "base") {
        point_config["gamma"] = values[point.value_index];
      }
      const auto [gamma, balance] =
          apply_mode(point.mode, point_config.at("gamma"), point_config.at("balance"));
      point_config["gamma"] = gamma;
      point_config["balance"] = balance;

      trainer::TrainConfig config = make_train_config(point_config, seed);
      const model::ModelSpec spec =
          make_model_spec(point_config, value_datasets[point.value_index]);
      point.result = trainer::run_experiment(value_datasets[point.value_index], spec,
                                             config, test_fraction, splits);
    } catch (const std::exception& error) {
      point.error = error.what();
      point.error_code = severity(error);
    }
  };

  const int jobs = std::max(1, c.at("jobs").get<int>());
  if (jobs == 1 || points.size() <= 1) {
    for (Point& point : points) run_point(point);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < points.size();) {
        run_point(points[i]);
      }
    };
    std::vector<std::thread> pool;
    const int threads = std::min<int>(jobs, static_cast<int>(points.size()));
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& thread : pool) thread.join();
  }

  // Per-point artifacts plus the aggregate table, sorted by axis value with
  // ties kept in --modes order (values are pre-sorted at parse time).
  std::string csv =
      "axis_value,mode,acc_mean,acc_std,sigma_acc_mean,sigma_acc_std,"
      "deo_max_mean,deo_max_std,deo_avg_mean,deo_avg_std\n";
  int exit_code = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point& point = points[i];
    const double value = values[point.value_index];
    json doc{{"schema_version", kSchemaVersion},
             {"axis", axis},
             {"axis_value", value},
             {"mode", point.mode},
             {"partial", point.result.partial || !point.error.empty()}};
    if (point.error.empty()) {
      json splits_json = json::array();
      for (std::size_t s = 0; s < point.result.split_reports.size(); ++s) {
        if (point.result.split_errors[s].empty()) {
          splits_json.push_back(metrics_to_json(point.result.split_reports[s]));
        } else {
          splits_json.push_back(nullptr);
        }
      }
      doc["splits"] = std::move(splits_json);
      doc["split_errors"] = point.result.split_errors;
      json aggregates = json::object();
      for (const auto& [key, aggregate] : point.result.aggregates) {
        aggregates[key] = {{"mean", aggregate.mean}, {"std", aggregate.stddev}};
      }
      doc["aggregates"] = std::move(aggregates);
    } else {
      doc["error"] = point.error;
      exit_code = std::max(exit_code, point.error_code);
    }
    write_json(ctx.out_dir / (name + ".point" + std::to_string(i) + "." + point.mode +
                              ".json"),
               doc);

    csv += io::double_repr(value) + "," + point.mode;
    if (point.error.empty() && !point.result.aggregates.empty()) {
      for (const char* key : {"acc", "sigma_acc", "deo_max", "deo_avg"}) {
        const trainer::Aggregate& aggregate = point.result.aggregates.at(key);
        csv += "," + io::double_repr(aggregate.mean) + "," +
               io::double_repr(aggregate.stddev);
      }
      if (point.result.partial) {
        std::fprintf(stderr, "warning: point %zu (%s=%s, %s) aggregated from fewer "
                             "than %d splits\n",
                     i, axis.c_str(), io::double_repr(value).c_str(),
                     point.mode.c_str(), splits);
      }
    } else {
      for (int field = 0; field < 8; ++field) csv += ",nan";
      exit_code = std::max(exit_code, 3);
      std::fprintf(stderr, "error: sweep point %zu (%s=%s, %s) failed: %s\n", i,
                   axis.c_str(), io::double_repr(value).c_str(), point.mode.c_str(),
                   point.error.empty() ? "no split succeeded" : point.error.c_str());
    }
    csv += "\n";
  }
  io::atomic_write(ctx.out_dir / (name + ".csv"), csv);
  write_json(ctx.out_dir / (name + ".manifest.json"),
             build_manifest(ctx, {input}, {{"root", seed}}));
  return exit_code;
}

int dispatch(const Ctx& ctx) {
  if (ctx.command == "gen") return run_gen(ctx);
  if (ctx.command == "skew") return run_skew(ctx);
  if (ctx.command == "train") return run_train(ctx);
  if (ctx.command == "eval") return run_eval(ctx);
  if (ctx.command == "sweep") return run_sweep(ctx);
  throw ConfigError("unknown command '" + ctx.command + "'");
}

int run_replay(const std::string& manifest_path, std::string out_dir) {
  const json manifest = json::parse(io::read_file(manifest_path), nullptr, false);
  if (manifest.is_discarded()) {
    throw ParseError(manifest_path, 1, "invalid JSON");
  }
  if (manifest.at("schema_version").get<int>() != kSchemaVersion) {
    throw ConfigError("unsupported manifest schema_version");
  }
  if (manifest.at("tool_version").get<std::string>() != kVersion) {
    throw ConfigError("manifest was written by tool version " +
                      manifest.at("tool_version").get<std::string>() +
                      "; this binary is " + kVersion +
                      " and cannot guarantee identical output");
  }
  for (const json& input : manifest.at("inputs")) {
    const std::string path = input.at("path").get<std::string>();
    const std::string expected = input.at("sha256").get<std::string>();
    const std::string actual = sha256_hex(io::read_file(path));
    if (actual != expected) {
      throw Error("input " + path + " digest mismatch: manifest has " + expected +
                  ", file has " + actual);
    }
  }
  Ctx ctx;
  ctx.command = manifest.at("command").get<std::string>();
  ctx.config = manifest.at("config");
  ctx.created_at = manifest.at("created_at").get<std::string>();
  ctx.out_dir =
      out_dir.empty() ? fs::path(manifest_path).parent_path() : fs::path(out_dir);
  if (ctx.out_dir.empty()) ctx.out_dir = ".";
  return dispatch(ctx);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairness-aware training experiments: dataset generation, "
               "skewing, training, evaluation and sweeps"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  int exit_code = 0;

  // Options shared verbatim by the producing commands.
  struct Common {
    std::string out_dir = ".";
    std::string config_file;
    std::string timestamp;
    std::uint64_t seed = 0;
    std::string name;
    bool has_seed = true;

    void add_to(CLI::App* cmd, const std::string& default_name, bool with_seed = true) {
      name = default_name;
      has_seed = with_seed;
      cmd->add_option("--out-dir", out_dir, "directory for output files")
          ->default_val(out_dir);
      cmd->add_option("--config", config_file, "JSON config file (flags win)");
      cmd->add_option("--timestamp", timestamp,
                      "manifest timestamp override (default: current UTC time)");
      cmd->add_option("--name", name, "base name for output files")
          ->default_val(default_name);
      if (with_seed) {
        cmd->add_option("--seed", seed, "root seed for all randomness")
            ->default_val(seed);
      }
    }

    Ctx make_ctx(const CLI::App* cmd, const std::string& command, const json& file,
                 json config) {
      resolve(cmd, "--name", file, "name", name);
      if (has_seed) resolve(cmd, "--seed", file, "seed", seed);
      config["name"] = name;
      Ctx ctx;
      ctx.command = command;
      ctx.config = std::move(config);
      ctx.out_dir = out_dir;
      ctx.created_at = timestamp.empty() ? now_utc_iso() : timestamp;
      return ctx;
    }
  };

  // ---- gen ----
  auto gen_common = std::make_shared<Common>();
  struct GenFlags {
    int samples = 1000;
    int classes = 2;
    int demographics = 2;
    int features = 2;
    double separation = 1.0;
    std::vector<double> noise;
    std::vector<double> shift;
    double pair_skew = 0.0;
  };
  auto gen_flags = std::make_shared<GenFlags>();
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen_common->add_to(gen, "dataset");
  gen->add_option("--samples", gen_flags->samples, "sample count")
      ->default_val(gen_flags->samples);
  gen->add_option("--classes", gen_flags->classes, "target classes")
      ->default_val(gen_flags->classes);
  gen->add_option("--demographics", gen_flags->demographics, "protected values")
      ->default_val(gen_flags->demographics);
  gen->add_option("--features", gen_flags->features, "feature dimensions")
      ->default_val(gen_flags->features);
  gen->add_option("--separation", gen_flags->separation,
                  "distance between class centroids")
      ->default_val(gen_flags->separation);
  gen->add_option("--noise", gen_flags->noise, "per-demographic noise scales")
      ->delimiter(',');
  gen->add_option("--shift", gen_flags->shift, "per-demographic centroid offsets")
      ->delimiter(',');
  gen->add_option("--pair-skew", gen_flags->pair_skew,
                  "sample (protected,target) pairs from a skew grid with this s");
  gen->callback([gen, gen_common, gen_flags, &exit_code] {
    const json file = load_config_file(gen_common->config_file);
    GenFlags& f = *gen_flags;
    resolve(gen, "--samples", file, "samples", f.samples);
    resolve(gen, "--classes", file, "classes", f.classes);
    resolve(gen, "--demographics", file, "demographics", f.demographics);
    resolve(gen, "--features", file, "features", f.features);
    resolve(gen, "--separation", file, "separation", f.separation);
    resolve(gen, "--noise", file, "noise", f.noise);
    resolve(gen, "--shift", file, "shift", f.shift);
    resolve(gen, "--pair-skew", file, "pair_skew", f.pair_skew);
    json config{{"samples", f.samples},    {"classes", f.classes},
                {"demographics", f.demographics}, {"features", f.features},
                {"separation", f.separation},     {"noise", f.noise},
                {"shift", f.shift}};
    config["pair_skew"] =
        given(gen, "--pair-skew", file, "pair_skew") ? json(f.pair_skew) : json();
    Ctx ctx = gen_common->make_ctx(gen, "gen", file, std::move(config));
    ctx.config["seed"] = gen_common->seed;
    exit_code = run_gen(ctx);
  });

  // ---- skew ----
  auto skew_common = std::make_shared<Common>();
  struct SkewFlags {
    std::string input;
    double skew = 0.0;
    int classes = 0;
    int demographics = 0;
  };
  auto skew_flags = std::make_shared<SkewFlags>();
  CLI::App* skew = app.add_subcommand("skew", "undersample a dataset onto a skew grid");
  skew_common->add_to(skew, "skewed");
  skew->add_option("input", skew_flags->input, "dataset CSV")->required();
  skew->add_option("--skew", skew_flags->skew, "skew parameter s in [0,1]")->required();
  skew->add_option("--classes", skew_flags->classes,
                   "declared class count (default: inferred)");
  skew->add_option("--demographics", skew_flags->demographics,
                   "declared demographic count (default: inferred)");
  skew->callback([skew, skew_common, skew_flags, &exit_code] {
    const json file = load_config_file(skew_common->config_file);
    SkewFlags& f = *skew_flags;
    resolve(skew, "input", file, "input", f.input);
    resolve(skew, "--skew", file, "skew", f.skew);
    resolve(skew, "--classes", file, "classes", f.classes);
    resolve(skew, "--demographics", file, "demographics", f.demographics);
    json config{{"input", f.input}, {"skew", f.skew}};
    config["classes"] =
        given(skew, "--classes", file, "classes") ? json(f.classes) : json();
    config["demographics"] = given(skew, "--demographics", file, "demographics")
                                 ? json(f.demographics)
                                 : json();
    Ctx ctx = skew_common->make_ctx(skew, "skew", file, std::move(config));
    ctx.config["seed"] = skew_common->seed;
    exit_code = run_skew(ctx);
  });

  // ---- train ----
  auto train_common = std::make_shared<Common>();
  struct TrainFlags {
    std::string input;
    std::string mode = "base";
    double test_fraction = 0.2;
    int classes = 0;
    int demographics = 0;
  };
  auto train_flags = std::make_shared<TrainFlags>();
  auto train_options = std::make_shared<TrainOptions>();
  CLI::App* train = app.add_subcommand("train", "train one model on a balanced split");
  train_common->add_to(train, "run");
  train->add_option("input", train_flags->input, "dataset CSV")->required();
  train->add_option("--mode", train_flags->mode, "naive|naive-balanced|base")
      ->default_val(train_flags->mode);
  train->add_option("--test-fraction", train_flags->test_fraction,
                    "balanced test split fraction")
      ->default_val(train_flags->test_fraction);
  train->add_option("--classes", train_flags->classes,
                    "declared class count (default: inferred)");
  train->add_option("--demographics", train_flags->demographics,
                    "declared demographic count (default: inferred)");
  train_options->add_to(train);
  train->callback([train, train_common, train_flags, train_options, &exit_code] {
    const json file = load_config_file(train_common->config_file);
    TrainFlags& f = *train_flags;
    resolve(train, "input", file, "input", f.input);
    resolve(train, "--mode", file, "mode", f.mode);
    resolve(train, "--test-fraction", file, "test_fraction", f.test_fraction);
    resolve(train, "--classes", file, "classes", f.classes);
    resolve(train, "--demographics", file, "demographics", f.demographics);

    json config = train_options->resolve_raw(train, file);
    const auto [gamma, balance] =
        apply_mode(f.mode, config.at("gamma"), config.at("balance"));
    config["gamma"] = gamma;
    config["balance"] = balance;
    config["mode"] = f.mode;
    config["input"] = f.input;
    config["test_fraction"] = f.test_fraction;
    config["classes"] =
        given(train, "--classes", file, "classes") ? json(f.classes) : json();
    config["demographics"] = given(train, "--demographics", file, "demographics")
                                 ? json(f.demographics)
                                 : json();
    Ctx ctx = train_common->make_ctx(train, "train", file, std::move(config));
    ctx.config["seed"] = train_common->seed;
    exit_code = run_train(ctx);
  });

  // ---- eval ----
  auto eval_common = std::make_shared<Common>();
  struct EvalFlags {
    std::string checkpoint;
    std::string input;
    std::string missing_cells = "error";
    int classes = 0;
    int demographics = 0;
  };
  auto eval_flags = std::make_shared<EvalFlags>();
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_common->add_to(eval, "eval", /*with_seed=*/false);
  eval->add_option("checkpoint", eval_flags->checkpoint, "checkpoint JSON")->required();
  eval->add_option("input", eval_flags->input, "dataset CSV")->required();
  eval->add_option("--missing-cells", eval_flags->missing_cells, "error|skip")
      ->default_val(eval_flags->missing_cells);
  eval->add_option("--classes", eval_flags->classes,
                   "declared class count (default: inferred)");
  eval->add_option("--demographics", eval_flags->demographics,
                   "declared demographic count (default: inferred)");
  eval->callback([eval, eval_common, eval_flags, &exit_code] {
    const json file = load_config_file(eval_common->config_file);
    EvalFlags& f = *eval_flags;
    resolve(eval, "checkpoint", file, "checkpoint", f.checkpoint);
    resolve(eval, "input", file, "input", f.input);
    resolve(eval, "--missing-cells", file, "missing_cells", f.missing_cells);
    resolve(eval, "--classes", file, "classes", f.classes);
    resolve(eval, "--demographics", file, "demographics", f.demographics);
    json config{{"checkpoint", f.checkpoint},
                {"input", f.input},
                {"missing_cells", f.missing_cells}};
    config["classes"] =
        given(eval, "--classes", file, "classes") ? json(f.classes) : json();
    config["demographics"] = given(eval, "--demographics", file, "demographics")
                                 ? json(f.demographics)
                                 : json();
    exit_code = run_eval(eval_common->make_ctx(eval, "eval", file, std::move(config)));
  });

  // ---- sweep ----
  auto sweep_common = std::make_shared<Common>();
  struct SweepFlags {
    std::string input;
    std::string axis;
    std::vector<double> values;
    std::vector<std::string> modes{"naive", "base"};
    int splits = 3;
    int jobs = 1;
    double test_fraction = 0.2;
    int classes = 0;
    int demographics = 0;
  };
  auto sweep_flags = std::make_shared<SweepFlags>();
  auto sweep_options = std::make_shared<TrainOptions>();
  CLI::App* sweep =
      app.add_subcommand("sweep", "grid over gamma, kappa or skew, with aggregates");
  sweep_common->add_to(sweep, "sweep");
  sweep->add_option("input", sweep_flags->input, "dataset CSV")->required();
  sweep->add_option("--axis", sweep_flags->axis, "gamma|kappa|skew")->required();
  sweep->add_option("--values", sweep_flags->values, "axis values")
      ->delimiter(',')
      ->required();
  sweep->add_option("--modes", sweep_flags->modes, "modes to run per value")
      ->delimiter(',')
      ->default_str("naive,base");
  sweep->add_option("--splits", sweep_flags->splits, "train/test splits per point")
      ->default_val(sweep_flags->splits);
  sweep->add_option("--jobs", sweep_flags->jobs, "concurrent sweep points")
      ->default_val(sweep_flags->jobs);
  sweep->add_option("--test-fraction", sweep_flags->test_fraction,
                    "balanced test split fraction")
      ->default_val(sweep_flags->test_fraction);
  sweep->add_option("--classes", sweep_flags->classes,
                    "declared class count (default: inferred)");
  sweep->add_option("--demographics", sweep_flags->demographics,
                    "declared demographic count (default: inferred)");
  sweep_options->add_to(sweep);
  sweep->callback([sweep, sweep_common, sweep_flags, sweep_options, &exit_code] {
    const json file = load_config_file(sweep_common->config_file);
    SweepFlags& f = *sweep_flags;
    resolve(sweep, "input", file, "input", f.input);
    resolve(sweep, "--axis", file, "axis", f.axis);
    resolve(sweep, "--values", file, "values", f.values);
    resolve(sweep, "--modes", file, "modes", f.modes);
    resolve(sweep, "--splits", file, "splits", f.splits);
    resolve(sweep, "--jobs", file, "jobs", f.jobs);
    resolve(sweep, "--test-fraction", file, "test_fraction", f.test_fraction);
    resolve(sweep, "--classes", file, "classes", f.classes);
    resolve(sweep, "--demographics", file, "demographics", f.demographics);

    if (f.axis != "gamma" && f.axis != "kappa" && f.axis != "skew") {
      throw ConfigError("--axis must be gamma, kappa or skew, got '" + f.axis + "'");
    }
    if (f.values.empty()) {
      throw ConfigError("--values must list at least one axis value");
    }
    for (const std::string& mode : f.modes) {
      if (mode != "naive" && mode != "naive-balanced" && mode != "base") {
        throw ConfigError("unknown mode '" + mode + "' in --modes");
      }
    }
    json base = sweep_options->resolve_raw(sweep, file);
    if (f.axis == "gamma" && !base.at("gamma").is_null()) {
      throw ConfigError("--gamma conflicts with --axis gamma");
    }
    if (f.axis == "kappa" && given(sweep, "--kappa", file, "kappa")) {
      throw ConfigError("--kappa conflicts with --axis kappa");
    }
    std::sort(f.values.begin(), f.values.end());

    json config{{"input", f.input},   {"axis", f.axis},
                {"values", f.values}, {"modes", f.modes},
                {"splits", f.splits}, {"jobs", f.jobs},
                {"test_fraction", f.test_fraction}};
    config["train"] = std::move(base);
    config["classes"] =
        given(sweep, "--classes", file, "classes") ? json(f.classes) : json();
    config["demographics"] = given(sweep, "--demographics", file, "demographics")
                                 ? json(f.demographics)
                                 : json();
    Ctx ctx = sweep_common->make_ctx(sweep, "sweep", file, std::move(config));
    ctx.config["seed"] = sweep_common->seed;
    exit_code = run_sweep(ctx);
  });

  // ---- replay ----
  auto replay_flags = std::make_shared<std::pair<std::string, std::string>>();
  CLI::App* replay =
      app.add_subcommand("replay", "re-run a command from its manifest, byte-for-byte");
  replay->add_option("manifest", replay_flags->first, "manifest JSON")->required();
  replay->add_option("--out-dir", replay_flags->second,
                     "output directory (default: the manifest's directory)");
  replay->callback([replay_flags, &exit_code] {
    exit_code = run_replay(replay_flags->first, replay_flags->second);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return exit_code;
}

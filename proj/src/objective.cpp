#include "fairbase/objective.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "fairbase/errors.hpp"

namespace fairbase::objective {

void ObjectiveConfig::validate() const {
  if (!(kappa > 0.0)) {
    throw ArgumentError("kappa must be positive, got " + std::to_string(kappa));
  }
  if (!(gamma >= 0.0)) {
    throw ArgumentError("gamma must be non-negative, got " + std::to_string(gamma));
  }
  if (!(sigma_epsilon > 0.0)) {
    throw ArgumentError("sigma_epsilon must be positive, got " +
                        std::to_string(sigma_epsilon));
  }
}

ValueIndex largest_non_target(std::span<const double> output, int target_index) {
  if (output.size() < 2) {
    throw ArgumentError("output vector must have at least 2 elements, got " +
                        std::to_string(output.size()));
  }
  if (target_index < 0 || static_cast<std::size_t>(target_index) >= output.size()) {
    throw ArgumentError("target index " + std::to_string(target_index) +
                        " out of range for vector of length " +
                        std::to_string(output.size()));
  }
  ValueIndex best{0.0, -1};
  for (std::size_t k = 0; k < output.size(); ++k) {
    if (static_cast<int>(k) == target_index) continue;
    if (best.index < 0 || output[k] > best.value) {
      best = {output[k], static_cast<int>(k)};
    }
  }
  return best;
}

double soft_accuracy(double y_t, double y_m, double kappa) {
  const double x = kappa * (y_t - y_m);
  // Two-branch sigmoid: never exponentiates a positive argument.
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

SoftAccuracyGrad soft_accuracy_grad(double y_t, double y_m, double kappa) {
  const double s = soft_accuracy(y_t, y_m, kappa);
  const double d = kappa * s * (1.0 - s);
  return {d, -d};
}

std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probabilities(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probabilities[k] = std::exp(logits[k] - peak);
    sum += probabilities[k];
  }
  for (double& p : probabilities) p /= sum;
  return probabilities;
}

namespace {

// grad_logits_k = p_k * (g_k - sum_j g_j p_j) for an upstream gradient g
// w.r.t. the softmax output p.
void add_softmax_backward(const std::vector<double>& probabilities,
                          const std::vector<std::pair<int, double>>& upstream,
                          std::vector<double>& grad_logits) {
  double dot = 0.0;
  for (const auto& [index, g] : upstream) {
    dot += g * probabilities[index];
  }
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    double g_k = 0.0;
    for (const auto& [index, g] : upstream) {
      if (static_cast<std::size_t>(index) == k) g_k += g;
    }
    grad_logits[k] += probabilities[k] * (g_k - dot);
  }
}

}  // namespace

SigmaSoft sigma_acc_soft(const OutputBatch& batch, const ObjectiveConfig& config,
                         std::optional<int> expected_demographics) {
  batch.validate();
  config.validate();

  if (expected_demographics) {
    std::set<int> present(batch.demographics.begin(), batch.demographics.end());
    for (int a = 0; a < *expected_demographics; ++a) {
      if (!present.count(a)) {
        throw DegenerateGroupError(
            "demographic " + std::to_string(a) + " has no samples in this batch", a);
      }
    }
  }

  const bool use_softmax = config.surrogate_input == SurrogateInput::kSoftmaxProbabilities;
  const std::size_t n = batch.size();

  struct SampleEval {
    double soft = 0.0;
    double d_soft = 0.0;  // d soft / d surrogate[target]; rival gets -d_soft
    int rival = 0;
    std::vector<double> probabilities;  // softmax mode only
  };
  std::vector<SampleEval> evals(n);

  // Per-demographic sums of soft accuracy, keyed by the values present.
  std::map<int, std::pair<double, std::int64_t>> groups;  // sum, count
  for (std::size_t i = 0; i < n; ++i) {
    SampleEval& ev = evals[i];
    const std::vector<double>* surrogate = &batch.outputs[i];
    if (use_softmax) {
      ev.probabilities = softmax(batch.outputs[i]);
      surrogate = &ev.probabilities;
    }
    const int target = batch.targets[i];
    const ValueIndex rival = largest_non_target(*surrogate, target);
    ev.rival = rival.index;
    ev.soft = soft_accuracy((*surrogate)[target], rival.value, config.kappa);
    ev.d_soft = config.kappa * ev.soft * (1.0 - ev.soft);
    auto& [sum, count] = groups[batch.demographics[i]];
    sum += ev.soft;
    count += 1;
  }

  const double group_count = static_cast<double>(groups.size());
  std::map<int, double> group_means;
  double mu = 0.0;
  for (const auto& [demographic, sum_count] : groups) {
    const double mean = sum_count.first / static_cast<double>(sum_count.second);
    group_means[demographic] = mean;
    mu += mean;
  }
  mu /= group_count;

  double variance = 0.0;
  for (const auto& [demographic, mean] : group_means) {
    variance += (mean - mu) * (mean - mu);
  }
  variance /= group_count;
  variance = std::max(variance, 0.0);

  SigmaSoft result;
  result.value = std::sqrt(variance + config.sigma_epsilon) -
                 std::sqrt(config.sigma_epsilon);

  // d value / d mean_a = (mean_a - mu) / (|A| * sqrt(variance + epsilon));
  // the mu dependence cancels because the deviations sum to zero.
  const double scale = 1.0 / (group_count * std::sqrt(variance + config.sigma_epsilon));
  std::map<int, double> group_coefficient;
  for (const auto& [demographic, mean] : group_means) {
    group_coefficient[demographic] =
        (mean - mu) * scale / static_cast<double>(groups[demographic].second);
  }

  result.grad_outputs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    result.grad_outputs[i].assign(batch.outputs[i].size(), 0.0);
    const SampleEval& ev = evals[i];
    const double upstream = group_coefficient[batch.demographics[i]] * ev.d_soft;
    const int target = batch.targets[i];
    if (use_softmax) {
      add_softmax_backward(ev.probabilities,
                           {{target, upstream}, {ev.rival, -upstream}},
                           result.grad_outputs[i]);
    } else {
      result.grad_outputs[i][target] += upstream;
      result.grad_outputs[i][ev.rival] -= upstream;
    }
  }
  return result;
}

CrossEntropy cross_entropy(const OutputBatch& batch) {
  batch.validate();
  const std::size_t n = batch.size();
  CrossEntropy result;
  result.grad_logits.resize(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double>& logits = batch.outputs[i];
    const double peak = *std::max_element(logits.begin(), logits.end());
    double exp_sum = 0.0;
    for (double z : logits) exp_sum += std::exp(z - peak);
    const double log_sum_exp = peak + std::log(exp_sum);
    sum += log_sum_exp - logits[batch.targets[i]];

    result.grad_logits[i].resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double p = std::exp(logits[k] - log_sum_exp);
      const double indicator = (static_cast<int>(k) == batch.targets[i]) ? 1.0 : 0.0;
      result.grad_logits[i][k] = (p - indicator) / static_cast<double>(n);
    }
  }
  result.value = sum / static_cast<double>(n);
  return result;
}

LossValue total_loss(const OutputBatch& batch, const ObjectiveConfig& config,
                     std::optional<int> expected_demographics) {
  config.validate();
  LossValue loss;
  CrossEntropy ce = cross_entropy(batch);
  loss.ce_component = ce.value;
  loss.grad_outputs = std::move(ce.grad_logits);

  if (config.gamma > 0.0) {
    SigmaSoft sigma = sigma_acc_soft(batch, config, expected_demographics);
    loss.sigma_soft_component = sigma.value;
    for (std::size_t i = 0; i < loss.grad_outputs.size(); ++i) {
      for (std::size_t k = 0; k < loss.grad_outputs[i].size(); ++k) {
        loss.grad_outputs[i][k] += config.gamma * sigma.grad_outputs[i][k];
      }
    }
  }
  loss.total = loss.ce_component + config.gamma * loss.sigma_soft_component;
  return loss;
}

}  // namespace fairbase::objective

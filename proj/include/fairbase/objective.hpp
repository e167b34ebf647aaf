#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fairbase/batch.hpp"

namespace fairbase::objective {

// What the sigmoid surrogate reads from the model output. With
// kSoftmaxProbabilities the score differences fed to the sigmoid stay in
// [-1, 1], keeping the sharpness parameter's scale comparable across models;
// kRawLogits applies it to the outputs directly. Gradients returned by this
// module are always with respect to the raw outputs, in both modes.
enum class SurrogateInput { kSoftmaxProbabilities, kRawLogits };

struct ObjectiveConfig {
  double kappa = 10.0;        // sharpness of the soft accuracy sigmoid
  double gamma = 0.0;         // weight of the fairness term
  SurrogateInput surrogate_input = SurrogateInput::kSoftmaxProbabilities;
  double sigma_epsilon = 1e-12;  // smoothing under the sqrt of the std term

  void validate() const;  // throws ArgumentError
};

struct ValueIndex {
  double value = 0.0;
  int index = 0;
};

// Largest element excluding target_index; ties broken by lowest index so the
// subgradient routing is deterministic.
ValueIndex largest_non_target(std::span<const double> output, int target_index);

// 1 / (1 + exp(-kappa * (y_t - y_m))), numerically stable for large |kappa|.
double soft_accuracy(double y_t, double y_m, double kappa);

struct SoftAccuracyGrad {
  double d_target = 0.0;  // d soft_accuracy / d y_t
  double d_rival = 0.0;   // d soft_accuracy / d y_m (= -d_target)
};

SoftAccuracyGrad soft_accuracy_grad(double y_t, double y_m, double kappa);

struct SigmaSoft {
  double value = 0.0;
  std::vector<std::vector<double>> grad_outputs;  // same shape as batch.outputs
};

// Smoothed population standard deviation of per-demographic mean soft
// accuracy: sqrt(variance + sigma_epsilon) - sqrt(sigma_epsilon). Demographics
// are estimated from the samples present in the batch; when
// expected_demographics is given, every demographic in [0, expected) must be
// present or a DegenerateGroupError is thrown.
SigmaSoft sigma_acc_soft(const OutputBatch& batch, const ObjectiveConfig& config,
                         std::optional<int> expected_demographics = std::nullopt);

struct CrossEntropy {
  double value = 0.0;
  std::vector<std::vector<double>> grad_logits;
};

// Mean negative log softmax probability of the target class; outputs are
// interpreted as raw logits.
CrossEntropy cross_entropy(const OutputBatch& batch);

struct LossValue {
  double total = 0.0;
  double ce_component = 0.0;
  double sigma_soft_component = 0.0;
  std::vector<std::vector<double>> grad_outputs;
};

// ce + gamma * sigma_soft with gradients w.r.t. the raw outputs. With
// gamma == 0 the sigma term is never evaluated.
LossValue total_loss(const OutputBatch& batch, const ObjectiveConfig& config,
                     std::optional<int> expected_demographics = std::nullopt);

// Stable softmax of one score vector.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace fairbase::objective

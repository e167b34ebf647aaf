#pragma once

#include <cstdint>
#include <vector>

namespace fairbase::model {

enum class Activation { kRelu, kTanh };

// Configurable multilayer perceptron; an empty hidden_dims list gives a
// plain linear classifier.
struct ModelSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int num_classes = 2;
  Activation activation = Activation::kRelu;
  std::uint64_t init_seed = 0;

  void validate() const;  // throws ArgumentError
};

// One dense layer; weights are row-major [out_dim][in_dim].
struct Layer {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  bool same_shape(const Layer& other) const {
    return in_dim == other.in_dim && out_dim == other.out_dim;
  }
};

struct ModelParams {
  std::vector<Layer> layers;
};

// Gradients share the parameter layout.
using ParamGrads = ModelParams;

// Activations recorded by forward() for use in backward().
struct ForwardCache {
  // layer_inputs[l][i] is the input vector of layer l for sample i
  // (layer_inputs[0] is the feature batch itself).
  std::vector<std::vector<std::vector<double>>> layer_inputs;
  // Pre-activation values of each hidden layer, for the activation derivative.
  std::vector<std::vector<std::vector<double>>> preactivations;
  Activation activation = Activation::kRelu;
};

// Fan-in-scaled uniform weights in (-sqrt(6/fan_in), sqrt(6/fan_in)) drawn
// only from init_seed; biases zero. Same spec and seed give bit-identical
// parameters.
ModelParams init_params(const ModelSpec& spec);

struct Forward {
  std::vector<std::vector<double>> logits;
  ForwardCache cache;
};

Forward forward(const ModelSpec& spec, const ModelParams& params,
                const std::vector<std::vector<double>>& features);

// Gradients of the loss w.r.t. every parameter, given the loss gradient
// w.r.t. the logits and the cache of the matching forward call.
ParamGrads backward(const ModelSpec& spec, const ModelParams& params,
                    const ForwardCache& cache,
                    const std::vector<std::vector<double>>& grad_logits);

struct OptimizerState {
  std::vector<Layer> first_moment;
  std::vector<Layer> second_moment;
  std::int64_t step_count = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;
};

OptimizerState init_optimizer(const ModelParams& params, double lr,
                              double weight_decay = 0.02);

// One bias-corrected adaptive-moment update with decoupled weight decay
// (p <- p * (1 - lr * weight_decay) before the moment step). Uses state.lr;
// throws NumericError on non-finite gradients.
void adamw_step(ModelParams& params, const ParamGrads& grads, OptimizerState& state);

}  // namespace fairbase::model
